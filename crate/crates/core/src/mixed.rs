//! Mixed K-memory strategies: a finite support of behavioural strategies
//! drawn once before play, and utilities against them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{game_space, AugSpace, StochasticGame, PROB_TOLERANCE};
use crate::mdp::{build_induced_mdp_in, policy_evaluation};
use crate::strategy::KMemoryStrategy;

/// A finite support of strategies with strictly positive selection weights.
#[derive(Clone, Debug)]
pub struct MixedStrategy {
    support: Vec<KMemoryStrategy>,
    weights: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(support: Vec<KMemoryStrategy>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::spec("support", "a mixture needs at least one strategy"));
        }
        if weights.len() != support.len() {
            return Err(Error::spec("weights", "one weight per support strategy is required"));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::spec(format!("weights[{i}]"), "weights must be strictly positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::spec("weights", format!("weights sum to {total}, expected 1")));
        }
        let first = &support[0];
        for (i, s) in support.iter().enumerate() {
            if s.agents() != first.agents() || s.n_actions() != first.n_actions() {
                return Err(Error::spec(
                    format!("support[{i}]"),
                    "support strategies control different agents or action sets",
                ));
            }
        }
        Ok(MixedStrategy { support, weights })
    }

    /// A one-element mixture.
    pub fn pure(strategy: KMemoryStrategy) -> Self {
        MixedStrategy {
            support: vec![strategy],
            weights: vec![1.0],
        }
    }

    pub fn support(&self) -> &[KMemoryStrategy] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn agents(&self) -> &[usize] {
        self.support[0].agents()
    }

    pub fn n_actions(&self) -> usize {
        self.support[0].n_actions()
    }

    /// The largest memory in the support.
    pub fn memory(&self) -> usize {
        self.support.iter().map(|s| s.memory()).max().unwrap_or(0)
    }
}

/// The induced behavioural strategy `ω(a|H, S) = Σ_ι p_ι π^ι(a|H, S)`.
pub fn induce_behavioral(mixed: &MixedStrategy) -> Result<KMemoryStrategy> {
    KMemoryStrategy::weighted(
        mixed
            .weights
            .iter()
            .copied()
            .zip(mixed.support.iter().cloned())
            .collect(),
    )
}

fn common_space(game: &StochasticGame, strategy: &KMemoryStrategy, mixed: &MixedStrategy) -> Result<Arc<AugSpace>> {
    game_space(game, strategy.memory().max(mixed.memory()))
}

fn check_sides(game: &StochasticGame, agent: usize, strategy: &KMemoryStrategy, mixed: &MixedStrategy) -> Result<()> {
    if strategy.agents() != [agent] {
        return Err(Error::mismatch(format!("strategy does not control agent {agent}")));
    }
    if mixed.agents() != game.others(agent).as_slice() {
        return Err(Error::mismatch("mixture must control every other agent"));
    }
    Ok(())
}

/// `V_mix(s₀) = Σ_ι p_ι V_ι(s₀)`: the utility of `strategy` when the
/// opponents draw one support member before play and keep it. One value
/// per initial state.
pub fn eval_vs_mixed(
    game: &StochasticGame,
    agent: usize,
    strategy: &KMemoryStrategy,
    mixed: &MixedStrategy,
    epsilon: f64,
) -> Result<Vec<f64>> {
    check_sides(game, agent, strategy, mixed)?;
    let space = common_space(game, strategy, mixed)?;
    let mut out = vec![0.0; space.roots().len()];
    for (w, opp) in mixed.weights.iter().zip(&mixed.support) {
        let mdp = build_induced_mdp_in(game, agent, opp, space.clone())?;
        let v = policy_evaluation(&mdp, strategy, epsilon)?;
        for (o, r) in out.iter_mut().zip(mdp.root_values(&v)) {
            *o += w * r;
        }
    }
    Ok(out)
}

/// Utility of `strategy` against the induced behavioural strategy, one
/// value per initial state.
pub fn eval_vs_behavioral(
    game: &StochasticGame,
    agent: usize,
    strategy: &KMemoryStrategy,
    mixed: &MixedStrategy,
    epsilon: f64,
) -> Result<Vec<f64>> {
    check_sides(game, agent, strategy, mixed)?;
    let space = common_space(game, strategy, mixed)?;
    let omega = induce_behavioral(mixed)?;
    let mdp = build_induced_mdp_in(game, agent, &omega, space)?;
    let v = policy_evaluation(&mdp, strategy, epsilon)?;
    Ok(mdp.root_values(&v))
}

/// `max over initial states of |V_mix − V_beh|`.
pub fn utility_gap(
    game: &StochasticGame,
    agent: usize,
    strategy: &KMemoryStrategy,
    mixed: &MixedStrategy,
    epsilon: f64,
) -> Result<f64> {
    let mix = eval_vs_mixed(game, agent, strategy, mixed, epsilon)?;
    let beh = eval_vs_behavioral(game, agent, strategy, mixed, epsilon)?;
    Ok(mix
        .iter()
        .zip(&beh)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
