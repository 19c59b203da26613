//! Contextual MDPs and their reduction to a two-agent stochastic game in
//! which a second agent, playing a stationary mixture, stands in for the
//! hidden context.
//!
//! The reduction decomposes, per state, the matrix whose row `c` stacks
//! `[T^c(·|S,a) ‖ R^c(S,a)]` over every action `a`. Stacking all actions
//! of a state into one row is what lets the synthetic agent's choice
//! `π_c(·|S)` ignore agent 1's simultaneous action.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{GameParts, StochasticGame};
use crate::mdp::TabularMdp;
use crate::mixed::MixedStrategy;
use crate::pomdp::{build_br_pomdp, solve_br_pomdp, ReducedPomdp};
use crate::strategy::KMemoryStrategy;

/// Default threshold for the "new row is nonzero" test.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

/// Reconstruction error accepted as exact.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-9;

/// Description of a CMDP used by [`Cmdp::new`]. Tables are indexed
/// `[context][state][action]`.
#[derive(Clone, Debug)]
pub struct CmdpParts {
    pub contexts: Vec<String>,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub transitions: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub context_prior: Vec<f64>,
    pub initial_states: Vec<usize>,
}

/// A family of MDPs over shared states and actions; one context is drawn
/// from the prior at the start of an episode and never changes.
#[derive(Clone, Debug)]
pub struct Cmdp {
    contexts: Vec<String>,
    states: Vec<String>,
    actions: Vec<String>,
    mdps: Vec<TabularMdp>,
    prior: Vec<f64>,
}

impl Cmdp {
    pub fn new(parts: CmdpParts) -> Result<Self> {
        let CmdpParts {
            contexts,
            states,
            actions,
            transitions,
            rewards,
            gamma,
            context_prior,
            initial_states,
        } = parts;
        if contexts.is_empty() {
            return Err(Error::spec("contexts", "at least one context is required"));
        }
        if transitions.len() != contexts.len() || rewards.len() != contexts.len() {
            return Err(Error::spec("contexts", "one transition and reward table per context is required"));
        }
        if context_prior.len() != contexts.len() {
            return Err(Error::spec("context_prior", "one weight per context is required"));
        }
        if let Some(i) = context_prior.iter().position(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::spec(format!("context_prior[{i}]"), "weights must be strictly positive"));
        }
        let total: f64 = context_prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::spec("context_prior", format!("weights sum to {total}, expected 1")));
        }
        if let Some(bad) = initial_states.iter().find(|&&s| s >= states.len()) {
            return Err(Error::spec("initial_states", format!("unknown state index {bad}")));
        }
        if initial_states.is_empty() {
            return Err(Error::spec("initial_states", "at least one initial state is required"));
        }
        let mut mdps = Vec::with_capacity(contexts.len());
        for (c, (t, r)) in transitions.into_iter().zip(rewards).enumerate() {
            if t.len() != states.len() {
                return Err(Error::spec(format!("contexts[{c}].transitions"), "one row set per state is required"));
            }
            let mdp = TabularMdp::new(actions.len(), t, r, gamma, initial_states.clone())
                .map_err(|e| Error::spec(format!("contexts[{c}]"), e.to_string()))?;
            mdps.push(mdp);
        }
        Ok(Cmdp {
            contexts,
            states,
            actions,
            mdps,
            prior: context_prior,
        })
    }

    pub fn contexts(&self) -> &[String] {
        &self.contexts
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn context_mdp(&self, c: usize) -> &TabularMdp {
        &self.mdps[c]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn gamma(&self) -> f64 {
        self.mdps[0].gamma()
    }

    pub fn initial_states(&self) -> &[usize] {
        self.mdps[0].roots()
    }

    /// The CMDP viewed as a POMDP whose hidden state is the context.
    pub fn as_pomdp(&self) -> Result<ReducedPomdp> {
        ReducedPomdp::from_types(self.mdps.clone(), self.prior.clone())
    }

    /// Row `c` is `[T^c(·|S,a) ‖ R^c(S,a)]` concatenated over actions.
    pub fn stacked_rows(&self, state: usize) -> Vec<Vec<f64>> {
        let n = self.states.len();
        self.mdps
            .iter()
            .map(|m| {
                let mut row = Vec::with_capacity(self.actions.len() * (n + 1));
                for a in 0..self.actions.len() {
                    let mut block = vec![0.0; n + 1];
                    for &(next, p) in m.transition(state, a) {
                        block[next] += p;
                    }
                    block[n] = m.reward(state, a);
                    row.extend(block);
                }
                row
            })
            .collect()
    }
}

/// Which properties a decomposition satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Validity {
    pub reconstruction_exact: bool,
    pub row_stochastic_basis: bool,
    pub row_stochastic_coefficients: bool,
}

impl Validity {
    pub fn all(&self) -> bool {
        self.reconstruction_exact && self.row_stochastic_basis && self.row_stochastic_coefficients
    }

    fn and(self, other: Validity) -> Validity {
        Validity {
            reconstruction_exact: self.reconstruction_exact && other.reconstruction_exact,
            row_stochastic_basis: self.row_stochastic_basis && other.row_stochastic_basis,
            row_stochastic_coefficients: self.row_stochastic_coefficients && other.row_stochastic_coefficients,
        }
    }
}

/// `M_C ≈ M_Π · M_T` with `M_T` of minimal row count.
#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    /// `M_T`: one row per synthetic action.
    pub basis: Vec<Vec<f64>>,
    /// `M_Π`: one row per context, one column per basis row.
    pub coefficients: Vec<Vec<f64>>,
    pub rank: usize,
    /// `‖M_Π·M_T − M_C‖∞`.
    pub residual: f64,
    pub validity: Validity,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest entry of `|M_Π·M_T − M_C|`.
pub fn reconstruction_error(m_c: &[Vec<f64>], coefficients: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (row, coef) in m_c.iter().zip(coefficients) {
        for (j, &target) in row.iter().enumerate() {
            let v: f64 = coef.iter().zip(basis).map(|(c, b)| c * b[j]).sum();
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

fn is_stochastic(row: &[f64], tol: f64) -> bool {
    row.iter().all(|&x| x >= -tol) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Modified Gram–Schmidt over the rows of `m_c`: each row's residual
/// against the current basis joins the basis, unit-normalised, when its
/// Euclidean norm exceeds `tolerance`. Coefficients are `M_C·M_Tᵀ`.
///
/// Validity is judged on whole rows; see [`stochastic_gauge`] for the
/// block-structured form used by the CMDP reduction.
pub fn decompose(m_c: &[Vec<f64>], tolerance: f64) -> Result<Decomposition> {
    let width = m_c
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::mismatch("decompose needs at least one row"))?;
    if m_c.iter().any(|r| r.len() != width) {
        return Err(Error::mismatch("rows have different lengths"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::mismatch("tolerance must be positive"));
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in m_c {
        let mut v = row.clone();
        // A second sweep keeps the basis orthonormal when rows are nearly dependent.
        for _ in 0..2 {
            for b in &basis {
                let d = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let n = norm(&v);
        if n > tolerance {
            for x in &mut v {
                *x /= n;
            }
            basis.push(v);
        }
    }
    let coefficients: Vec<Vec<f64>> = m_c
        .iter()
        .map(|row| basis.iter().map(|b| dot(row, b)).collect())
        .collect();
    let residual = reconstruction_error(m_c, &coefficients, &basis);
    let validity = Validity {
        reconstruction_exact: residual <= RECONSTRUCTION_TOLERANCE,
        row_stochastic_basis: basis.iter().all(|b| is_stochastic(b, tolerance)),
        row_stochastic_coefficients: coefficients.iter().all(|c| is_stochastic(c, tolerance)),
    };
    Ok(Decomposition {
        rank: basis.len(),
        basis,
        coefficients,
        residual,
        validity,
    })
}

/// Rescales every basis row so its first probability block sums to one,
/// moving the scale into the coefficient column, and re-judges validity
/// against the block structure: `blocks` are the column ranges holding
/// probabilities, every other column is free (rewards).
///
/// Every row of `M_C` has unit block sums, so every vector in its span has
/// equal sums across blocks; the rescaling therefore normalises all blocks
/// at once. A basis row whose block sum vanishes cannot be rescaled and
/// leaves the basis flagged as non-stochastic.
pub fn stochastic_gauge(
    m_c: &[Vec<f64>],
    mut dec: Decomposition,
    blocks: &[std::ops::Range<usize>],
    tolerance: f64,
) -> Decomposition {
    let mut basis_ok = true;
    for (k, row) in dec.basis.iter_mut().enumerate() {
        let sigma: f64 = blocks.first().map(|r| row[r.clone()].iter().sum()).unwrap_or(0.0);
        if sigma.abs() <= tolerance {
            basis_ok = false;
            continue;
        }
        for x in row.iter_mut() {
            *x /= sigma;
        }
        for coef in &mut dec.coefficients {
            coef[k] *= sigma;
        }
    }
    for row in &dec.basis {
        for r in blocks {
            if !is_stochastic(&row[r.clone()], tolerance) {
                basis_ok = false;
            }
        }
    }
    dec.residual = reconstruction_error(m_c, &dec.coefficients, &dec.basis);
    dec.validity = Validity {
        reconstruction_exact: dec.residual <= RECONSTRUCTION_TOLERANCE,
        row_stochastic_basis: basis_ok,
        row_stochastic_coefficients: dec.coefficients.iter().all(|c| is_stochastic(c, tolerance)),
    };
    dec
}

/// The result of reducing a CMDP to a game against a mixture.
#[derive(Clone, Debug)]
pub struct CmdpReduction {
    /// Per-state decompositions after the stochastic gauge.
    pub per_state: Vec<Decomposition>,
    /// Size of the synthetic agent's action set.
    pub n_synthetic: usize,
    /// Conjunction of the per-state flags.
    pub validity: Validity,
    /// Present only when every flag holds: a decomposition with negative
    /// entries is exact algebraically but not a realisable game.
    pub game: Option<StochasticGame>,
    pub mixture: Option<MixedStrategy>,
}

fn clamp_distribution(row: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = row.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = out.iter().sum();
    for x in &mut out {
        *x /= total;
    }
    out
}

/// Reduces `cmdp` to a two-agent game: agent 0 keeps the CMDP's states,
/// actions and rewards, agent 1 (reward 0) picks synthetic actions, and
/// context `c` becomes the stationary strategy `π_c(·|S)` of agent 1,
/// weighted by the context prior.
pub fn cmdp_to_sg(cmdp: &Cmdp, tolerance: f64) -> Result<CmdpReduction> {
    let n = cmdp.states.len();
    let n_actions = cmdp.actions.len();
    let blocks: Vec<_> = (0..n_actions).map(|a| a * (n + 1)..a * (n + 1) + n).collect();
    let mut per_state = Vec::with_capacity(n);
    for s in 0..n {
        let m_c = cmdp.stacked_rows(s);
        let dec = decompose(&m_c, tolerance)?;
        per_state.push(stochastic_gauge(&m_c, dec, &blocks, tolerance));
    }
    let n_synthetic = per_state.iter().map(|d| d.rank).max().unwrap_or(1).max(1);
    let validity = per_state.iter().fold(
        Validity {
            reconstruction_exact: true,
            row_stochastic_basis: true,
            row_stochastic_coefficients: true,
        },
        |acc, d| acc.and(d.validity),
    );
    if !validity.all() {
        return Ok(CmdpReduction {
            per_state,
            n_synthetic,
            validity,
            game: None,
            mixture: None,
        });
    }

    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for (s, dec) in per_state.iter().enumerate() {
        let mut t_rows = Vec::with_capacity(n_actions * n_synthetic);
        let mut r_rows = Vec::with_capacity(n_actions * n_synthetic);
        for a in 0..n_actions {
            for k in 0..n_synthetic {
                match dec.basis.get(k) {
                    Some(row) => {
                        let block = clamp_distribution(&row[blocks[a].clone()]);
                        t_rows.push(block.into_iter().enumerate().filter(|(_, p)| *p > 0.0).collect());
                        r_rows.push(vec![row[blocks[a].end], 0.0]);
                    }
                    None => {
                        // Never chosen: padded synthetic actions have zero probability.
                        t_rows.push(vec![(s, 1.0)]);
                        r_rows.push(vec![0.0, 0.0]);
                    }
                }
            }
        }
        transitions.push(t_rows);
        rewards.push(r_rows);
    }
    let game = StochasticGame::new(GameParts {
        agents: vec!["agent".into(), "context".into()],
        states: cmdp.states.clone(),
        actions: vec![
            cmdp.actions.clone(),
            (0..n_synthetic).map(|k| format!("z{k}")).collect(),
        ],
        transitions,
        rewards,
        gamma: cmdp.gamma(),
        initial_states: cmdp.initial_states().to_vec(),
    })?;
    let support = (0..cmdp.contexts.len())
        .map(|c| {
            let rows = per_state
                .iter()
                .map(|dec| {
                    let mut row = clamp_distribution(&dec.coefficients[c]);
                    row.resize(n_synthetic, 0.0);
                    row
                })
                .collect();
            KMemoryStrategy::per_state(1, rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = MixedStrategy::new(support, cmdp.prior.clone())?;
    Ok(CmdpReduction {
        per_state,
        n_synthetic,
        validity,
        game: Some(game),
        mixture: Some(mixture),
    })
}

/// Values of the CMDP solved directly and of the reduced game's best
/// response against the context mixture.
#[derive(Clone, Debug, Serialize)]
pub struct RoundTrip {
    /// Optimal value per initial state of the CMDP as a belief MDP.
    pub cmdp_value: Vec<f64>,
    /// Best-response value per initial state in the reduced game; absent
    /// in report-only mode.
    pub sg_br_value: Option<Vec<f64>>,
    /// Largest difference over initial states, `NaN` in report-only mode.
    pub gap: f64,
    pub validity: Validity,
    pub report_only: bool,
}

/// Solves both sides with the belief planner at the effective horizon of
/// `epsilon`. When the decomposition is not stochastic the game side is
/// skipped and the result is marked report-only.
pub fn roundtrip_check(cmdp: &Cmdp, epsilon: f64) -> Result<RoundTrip> {
    let direct = solve_br_pomdp(&cmdp.as_pomdp()?, epsilon)?;
    let reduction = cmdp_to_sg(cmdp, DEFAULT_RANK_TOLERANCE)?;
    let (sg, report_only) = match (&reduction.game, &reduction.mixture) {
        (Some(game), Some(mixture)) => {
            let pomdp = build_br_pomdp(game, 0, mixture)?;
            (Some(solve_br_pomdp(&pomdp, epsilon)?.root_values), false)
        }
        _ => (None, true),
    };
    let gap = match &sg {
        Some(v) => v
            .iter()
            .zip(&direct.root_values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        None => f64::NAN,
    };
    Ok(RoundTrip {
        cmdp_value: direct.root_values,
        sg_br_value: sg,
        gap,
        validity: reduction.validity,
        report_only,
    })
}
