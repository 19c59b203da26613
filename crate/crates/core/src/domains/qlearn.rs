//! Tabular Q-learning of a memory-restricted response against fixed
//! opponents, and exact finite-horizon rollouts.
//!
//! The learner sees only the last `k'` steps, which may be fewer than the
//! opponents remember. Dynamic programming cannot produce such a policy
//! directly, but a model-free learner can.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{slide_steps, AugmentedState, StochasticGame, Step};
use crate::strategy::{argmax, one_hot, KMemoryStrategy};

/// A Q-table keyed by `(last k' steps, state)`.
#[derive(Clone, Debug)]
pub struct QTable {
    memory: usize,
    n_states: usize,
    n_joint: usize,
    n_actions: usize,
    table: HashMap<u128, Vec<f64>>,
}

impl QTable {
    pub fn new(game: &StochasticGame, agent: usize, memory: usize) -> Result<Self> {
        let base = (game.n_states() * game.n_joint() + 1) as u128;
        let fits = (0..memory).try_fold(game.n_states() as u128, |acc, _| acc.checked_mul(base));
        if fits.is_none() {
            return Err(Error::SizeCap {
                what: "Q-learning history key",
                cap: u128::BITS as usize,
            });
        }
        Ok(QTable {
            memory,
            n_states: game.n_states(),
            n_joint: game.n_joint(),
            n_actions: game.n_actions(agent),
            table: HashMap::new(),
        })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn key(&self, history: &[Step], state: usize) -> u128 {
        let start = history.len().saturating_sub(self.memory);
        let base = (self.n_states * self.n_joint + 1) as u128;
        let mut key = 0u128;
        for step in &history[start..] {
            key = key * base + (step.state * self.n_joint + step.joint + 1) as u128;
        }
        // Pad short histories with zero digits so lengths stay distinguishable.
        for _ in history[start..].len()..self.memory {
            key *= base;
        }
        key * self.n_states as u128 + state as u128
    }

    /// Stored values, or zeros for an unseen key.
    pub fn values(&self, history: &[Step], state: usize) -> Vec<f64> {
        self.table
            .get(&self.key(history, state))
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn set(&mut self, history: &[Step], state: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.n_actions);
        let key = self.key(history, state);
        self.table.insert(key, values);
    }

    fn row_mut(&mut self, key: u128) -> &mut Vec<f64> {
        let n = self.n_actions;
        self.table.entry(key).or_insert_with(|| vec![0.0; n])
    }

    fn best(&self, key: u128) -> (usize, f64) {
        match self.table.get(&key) {
            Some(row) => {
                let a = argmax(row);
                (a, row[a])
            }
            None => (0, 0.0),
        }
    }

    /// The greedy deterministic strategy; unseen keys play action 0.
    pub fn greedy_strategy(&self, agent: usize) -> KMemoryStrategy {
        let table = Arc::new(self.clone());
        let n = self.n_actions;
        KMemoryStrategy::from_rule(agent, self.memory, n, move |history, state| {
            one_hot(n, table.best(table.key(history, state)).0)
        })
    }
}

#[derive(Clone, Debug)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub episode_length: usize,
    pub learn_rate: f64,
    /// Fraction of episodes after which the learning rate decays as `1/t`.
    pub decay_after: f64,
    pub explore_start: f64,
    pub explore_end: f64,
    pub discount: f64,
    pub seed: u64,
    pub initial: Option<QTable>,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            episodes: 50_000,
            episode_length: 100,
            learn_rate: 0.1,
            decay_after: 0.5,
            explore_start: 1.0,
            explore_end: 0.05,
            discount: 0.9,
            seed: 0,
            initial: None,
        }
    }
}

impl QLearningConfig {
    fn learn_rate_at(&self, episode: usize) -> f64 {
        let half = ((self.episodes as f64 * self.decay_after).ceil() as usize).max(1);
        if episode < half {
            self.learn_rate
        } else {
            self.learn_rate * half as f64 / (episode + 1) as f64
        }
    }

    fn explore_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.explore_end;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.explore_start + (self.explore_end - self.explore_start) * frac
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// Undiscounted return of the training episode.
    pub episode_return: f64,
}

#[derive(Clone, Debug)]
pub struct QLearningResult {
    pub policy: KMemoryStrategy,
    pub q: QTable,
    pub curve: Vec<CurvePoint>,
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Trains a `k_prime`-memory Q-table for `agent` against fixed opponents
/// (a joint strategy over the other agents).
///
/// Episodes start from the game's initial states in turn. Exploration is
/// ε-greedy with ε decaying linearly. Episodes are truncations of an
/// infinite discounted game, so the last step still bootstraps.
pub fn tabular_q_learning(
    game: &StochasticGame,
    agent: usize,
    opponents: &KMemoryStrategy,
    k_prime: usize,
    config: &QLearningConfig,
) -> Result<QLearningResult> {
    if opponents.agents() != game.others(agent).as_slice() {
        return Err(Error::mismatch("opponents must control every other agent"));
    }
    if !(0.0..1.0).contains(&config.discount) {
        return Err(Error::mismatch("Q-learning discount must be in [0, 1)"));
    }
    let mut q = match &config.initial {
        Some(init) if init.memory == k_prime => init.clone(),
        Some(_) => return Err(Error::mismatch("initial Q-table has a different memory")),
        None => QTable::new(game, agent, k_prime)?,
    };
    let window = k_prime.max(opponents.memory());
    let n_own = game.n_actions(agent);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::with_capacity(config.episodes);
    let initial = game.initial_states();

    for episode in 0..config.episodes {
        let alpha = config.learn_rate_at(episode);
        let explore = config.explore_at(episode);
        let mut state = initial[episode % initial.len()];
        let mut history: Vec<Step> = Vec::with_capacity(window + 1);
        let mut total = 0.0;
        for _ in 0..config.episode_length {
            let key = q.key(&history, state);
            let own = if rng.gen::<f64>() < explore {
                rng.gen_range(0..n_own)
            } else {
                q.best(key).0
            };
            let opp = sample(&mut rng, &opponents.probs(&history, state)?);
            let joint = game.compose(agent, own, opp);
            let reward = game.reward(state, joint, agent);
            let succ = game.successors(state, joint);
            let next = succ[sample_pairs(&mut rng, succ)].0;
            history = slide_steps(&history, Step::new(state, joint), window);
            let target = reward + config.discount * q.best(q.key(&history, next)).1;
            let row = q.row_mut(key);
            row[own] += alpha * (target - row[own]);
            total += reward;
            state = next;
        }
        curve.push(CurvePoint {
            episode,
            episode_return: total,
        });
    }
    Ok(QLearningResult {
        policy: q.greedy_strategy(agent),
        q,
        curve,
    })
}

fn sample_pairs(rng: &mut ChaCha8Rng, row: &[(usize, f64)]) -> usize {
    if row.len() == 1 {
        return 0;
    }
    let probs: Vec<f64> = row.iter().map(|&(_, p)| p).collect();
    sample(rng, &probs)
}

/// Exact expected return of `strategy` (for `agent`) against `opponents`
/// over `horizon` rounds from `initial`, discounting by `discount` (use 1
/// for a plain total). The distribution over histories is propagated
/// exactly, so deterministic play gives the realized payoff.
pub fn rollout_return(
    game: &StochasticGame,
    agent: usize,
    strategy: &KMemoryStrategy,
    opponents: &KMemoryStrategy,
    initial: usize,
    horizon: usize,
    discount: f64,
) -> Result<f64> {
    let window = strategy.memory().max(opponents.memory());
    let mut dist: HashMap<AugmentedState, f64> = HashMap::new();
    dist.insert(AugmentedState::root(initial), 1.0);
    let mut total = 0.0;
    let mut weight = 1.0;
    for _ in 0..horizon {
        let mut next_dist: HashMap<AugmentedState, f64> = HashMap::new();
        for (aug, &mass) in &dist {
            let own = strategy.probs_at(aug)?;
            let opp = opponents.probs_at(aug)?;
            for (a, &pa) in own.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (o, &po) in opp.iter().enumerate() {
                    if po == 0.0 {
                        continue;
                    }
                    let p = mass * pa * po;
                    let joint = game.compose(agent, a, o);
                    total += weight * p * game.reward(aug.state, joint, agent);
                    let history = slide_steps(&aug.history, Step::new(aug.state, joint), window);
                    for &(next, q) in game.successors(aug.state, joint) {
                        *next_dist
                            .entry(AugmentedState::new(history.clone(), next))
                            .or_insert(0.0) += p * q;
                    }
                }
            }
        }
        dist = next_dist;
        weight *= discount;
    }
    Ok(total)
}
