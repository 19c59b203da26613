//! K-memory Nash equilibria: joint policy evaluation, the advantage-based
//! refinement map Γ, fixed-point search and best-response certification.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{game_space, AugSpace, StochasticGame};
use crate::mdp::best_response_in;
use crate::strategy::{argmax, joint_opponent, one_hot, KMemoryStrategy};

/// Tolerance of the internal evaluations used for certification.
const CERT_EPSILON: f64 = 1e-11;

/// Probabilities below this are snapped to zero when purifying a profile.
const SNAP_THRESHOLD: f64 = 1e-3;

/// Successor table `[aug][joint] -> (aug', p)` of a game over a space.
#[derive(Clone, Debug)]
struct JointModel {
    space: Arc<AugSpace>,
    succ: Vec<Vec<Vec<(usize, f64)>>>,
}

impl JointModel {
    fn new(game: &StochasticGame, space: Arc<AugSpace>) -> Self {
        let succ = (0..space.len())
            .map(|x| {
                let s = space.get(x).state;
                (0..game.n_joint())
                    .map(|j| {
                        game.successors(s, j)
                            .iter()
                            .map(|&(next, p)| (space.successor(x, j, next), p))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        JointModel { space, succ }
    }
}

/// Dense per-agent tables `[agent][aug][action]`.
pub type ProfileTables = Vec<Vec<Vec<f64>>>;

/// A strategy profile with its joint evaluation.
#[derive(Clone, Debug)]
pub struct StrategyProfile {
    pub strategies: Vec<KMemoryStrategy>,
    /// `[agent][aug]`
    pub values: Vec<Vec<f64>>,
    /// `[agent][aug][action]`
    pub q_values: ProfileTables,
    pub probs: ProfileTables,
    model: JointModel,
}

impl StrategyProfile {
    pub fn space(&self) -> &Arc<AugSpace> {
        &self.model.space
    }

    pub fn memory(&self) -> usize {
        self.model.space.memory()
    }

    /// Values at the empty-history roots, `[agent][initial state]`.
    pub fn root_values(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|v| self.model.space.roots().iter().map(|&r| v[r]).collect())
            .collect()
    }

    /// Augmented states reachable from the roots under the profile itself.
    pub fn on_path(&self, game: &StochasticGame) -> Vec<bool> {
        reachable_under(game, &self.model, &self.probs)
    }
}

fn joint_prob(game: &StochasticGame, probs: &ProfileTables, x: usize, joint: usize, skip: Option<usize>) -> f64 {
    let mut p = 1.0;
    for (i, table) in probs.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        p *= table[x][game.action_of(joint, i)];
        if p == 0.0 {
            break;
        }
    }
    p
}

fn reachable_under(game: &StochasticGame, model: &JointModel, probs: &ProfileTables) -> Vec<bool> {
    let mut seen = vec![false; model.space.len()];
    let mut stack = model.space.roots().to_vec();
    for &r in &stack {
        seen[r] = true;
    }
    while let Some(x) = stack.pop() {
        for j in 0..game.n_joint() {
            if joint_prob(game, probs, x, j, None) == 0.0 {
                continue;
            }
            for &(y, _) in &model.succ[x][j] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    seen
}

/// Joint Bellman expectation iteration for every agent at once, followed
/// by the per-agent Q tables.
fn evaluate_tables(
    game: &StochasticGame,
    model: &JointModel,
    probs: &ProfileTables,
    warm: Option<Vec<Vec<f64>>>,
    epsilon: f64,
) -> (Vec<Vec<f64>>, ProfileTables) {
    let n = game.n_agents();
    let gamma = game.gamma();
    let len = model.space.len();
    // Collapse the profile into a chain with per-agent expected rewards.
    let mut chain: Vec<Vec<(usize, f64)>> = Vec::with_capacity(len);
    let mut reward: Vec<Vec<f64>> = vec![vec![0.0; len]; n];
    for x in 0..len {
        let s = model.space.get(x).state;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for j in 0..game.n_joint() {
            let pj = joint_prob(game, probs, x, j, None);
            if pj == 0.0 {
                continue;
            }
            for (i, r) in reward.iter_mut().enumerate() {
                r[x] += pj * game.reward(s, j, i);
            }
            row.extend(model.succ[x][j].iter().map(|&(y, q)| (y, pj * q)));
        }
        row.sort_by_key(|&(y, _)| y);
        row.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        chain.push(row);
    }
    let threshold = if gamma > 0.0 {
        epsilon * (1.0 - gamma) / gamma
    } else {
        f64::INFINITY
    };
    let mut values = warm.unwrap_or_else(|| vec![vec![0.0; len]; n]);
    let mut next = vec![0.0; len];
    for i in 0..n {
        loop {
            let mut residual = 0.0f64;
            let mut scale = 1.0f64;
            for x in 0..len {
                let future: f64 = chain[x].iter().map(|&(y, p)| p * values[i][y]).sum();
                let v = reward[i][x] + gamma * future;
                residual = residual.max((v - values[i][x]).abs());
                scale = scale.max(v.abs());
                next[x] = v;
            }
            std::mem::swap(&mut values[i], &mut next);
            if residual <= threshold.max(8.0 * f64::EPSILON * scale) {
                break;
            }
        }
    }
    let mut q: ProfileTables = (0..n)
        .map(|i| vec![vec![0.0; game.n_actions(i)]; len])
        .collect();
    for x in 0..len {
        let s = model.space.get(x).state;
        for j in 0..game.n_joint() {
            for i in 0..n {
                let p_others = joint_prob(game, probs, x, j, Some(i));
                if p_others == 0.0 {
                    continue;
                }
                let future: f64 = model.succ[x][j].iter().map(|&(y, p)| p * values[i][y]).sum();
                let cont = game.reward(s, j, i) + gamma * future;
                q[i][x][game.action_of(j, i)] += p_others * cont;
            }
        }
    }
    (values, q)
}

fn check_profile(game: &StochasticGame, strategies: &[KMemoryStrategy], k: usize) -> Result<()> {
    if strategies.len() != game.n_agents() {
        return Err(Error::mismatch(format!(
            "profile has {} strategies for {} agents",
            strategies.len(),
            game.n_agents()
        )));
    }
    for (i, s) in strategies.iter().enumerate() {
        if s.agents() != [i] {
            return Err(Error::mismatch(format!(
                "strategy {i} controls agents {:?}; profiles list one strategy per agent in order",
                s.agents()
            )));
        }
        if s.n_actions() != game.n_actions(i) {
            return Err(Error::mismatch(format!("strategy {i} has the wrong action count")));
        }
        if s.memory() > k {
            return Err(Error::mismatch(format!(
                "strategy {i} has memory {} above the profile memory {k}",
                s.memory()
            )));
        }
    }
    Ok(())
}

fn tables_to_strategies(space: &AugSpace, probs: &ProfileTables) -> Result<Vec<KMemoryStrategy>> {
    probs
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let n = rows.first().map_or(0, Vec::len);
            KMemoryStrategy::from_table(
                i,
                space.memory(),
                n,
                space.states().iter().cloned().zip(rows.iter().cloned()),
            )
        })
        .collect()
}

fn profile_from_tables(
    game: &StochasticGame,
    model: JointModel,
    probs: ProfileTables,
    warm: Option<Vec<Vec<f64>>>,
    epsilon: f64,
) -> Result<StrategyProfile> {
    let (values, q_values) = evaluate_tables(game, &model, &probs, warm, epsilon);
    let strategies = tables_to_strategies(&model.space, &probs)?;
    Ok(StrategyProfile {
        strategies,
        values,
        q_values,
        probs,
        model,
    })
}

/// Evaluates a profile (one strategy per agent, in agent order) over the
/// reachable `k`-memory augmented states. Strategies with shorter memory
/// are read as lifted to `k`.
pub fn joint_policy_evaluation(
    game: &StochasticGame,
    k: usize,
    strategies: &[KMemoryStrategy],
    epsilon: f64,
) -> Result<StrategyProfile> {
    let space = game_space(game, k)?;
    joint_policy_evaluation_in(game, space, strategies, epsilon)
}

/// [`joint_policy_evaluation`] over a caller-supplied space.
pub fn joint_policy_evaluation_in(
    game: &StochasticGame,
    space: Arc<AugSpace>,
    strategies: &[KMemoryStrategy],
    epsilon: f64,
) -> Result<StrategyProfile> {
    check_profile(game, strategies, space.memory())?;
    let probs = strategies
        .iter()
        .map(|s| s.materialize(&space))
        .collect::<Result<ProfileTables>>()?;
    let model = JointModel::new(game, space);
    let (values, q_values) = evaluate_tables(game, &model, &probs, None, epsilon);
    Ok(StrategyProfile {
        strategies: strategies.to_vec(),
        values,
        q_values,
        probs,
        model,
    })
}

/// `φ_{i,a}(H, S) = max{0, Q_i(H, S, a) − v_i(H, S)}`.
pub fn advantage(profile: &StrategyProfile) -> ProfileTables {
    advantage_of(&profile.values, &profile.q_values)
}

/// Γ applied to dense tables: `(π + φ) / (1 + Σ φ)`, blended with the
/// current profile by `damping` (1 is the raw map).
pub fn refine_tables(probs: &ProfileTables, phi: &ProfileTables, damping: f64) -> ProfileTables {
    probs
        .iter()
        .zip(phi)
        .map(|(rows, phis)| {
            rows.iter()
                .zip(phis)
                .map(|(pi, f)| {
                    let denom: f64 = pi.iter().sum::<f64>() + f.iter().sum::<f64>();
                    pi.iter()
                        .zip(f)
                        .map(|(&p, &g)| damping * (p + g) / denom + (1.0 - damping) * p)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// One application of Γ, as table strategies over the profile's space.
pub fn refine(profile: &StrategyProfile) -> Result<Vec<KMemoryStrategy>> {
    let next = refine_tables(&profile.probs, &advantage(profile), 1.0);
    tables_to_strategies(&profile.model.space, &next)
}

/// `‖Γ(π) − π‖∞`, optionally restricted to the augmented states in `mask`.
pub fn fixed_point_residual(profile: &StrategyProfile, mask: Option<&[bool]>) -> f64 {
    let next = refine_tables(&profile.probs, &advantage(profile), 1.0);
    table_distance(&profile.probs, &next, mask)
}

fn table_distance(a: &ProfileTables, b: &ProfileTables, mask: Option<&[bool]>) -> f64 {
    let mut out = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        for (x, (pa, pb)) in ra.iter().zip(rb).enumerate() {
            if mask.is_some_and(|m| !m[x]) {
                continue;
            }
            for (u, v) in pa.iter().zip(pb) {
                out = out.max((u - v).abs());
            }
        }
    }
    out
}

/// Outcome of a best-response check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeCheck {
    pub is_ne: bool,
    /// Per agent: the largest gain of the exact best response over the
    /// profile value, over augmented states on the profile's path of play.
    pub exploitability: Vec<f64>,
}

impl NeCheck {
    pub fn max_exploitability(&self) -> f64 {
        self.exploitability.iter().copied().fold(0.0, f64::max)
    }
}

/// Certifies a profile by computing every agent's exact best response.
///
/// The gap is measured at every augmented state reachable from the roots
/// under the profile, which is where the equilibrium condition
/// constrains play.
pub fn verify_ne(game: &StochasticGame, strategies: &[KMemoryStrategy], epsilon_ne: f64) -> Result<NeCheck> {
    let k = strategies.iter().map(|s| s.memory()).max().unwrap_or(0);
    let profile = joint_policy_evaluation(game, k, strategies, CERT_EPSILON)?;
    verify_profile(game, &profile, epsilon_ne)
}

/// [`verify_ne`] for an already evaluated profile.
pub fn verify_profile(game: &StochasticGame, profile: &StrategyProfile, epsilon_ne: f64) -> Result<NeCheck> {
    let on_path = profile.on_path(game);
    let mut exploitability = Vec::with_capacity(game.n_agents());
    for i in 0..game.n_agents() {
        let others: Vec<KMemoryStrategy> = game
            .others(i)
            .into_iter()
            .map(|j| profile.strategies[j].clone())
            .collect();
        if others.is_empty() {
            // A lone agent is exploitable by its own optimum.
            let solo = crate::mdp::TabularMdp::new(
                game.n_actions(i),
                (0..profile.space().len())
                    .map(|x| {
                        (0..game.n_actions(i))
                            .map(|a| profile.model.succ[x][a].clone())
                            .collect()
                    })
                    .collect(),
                (0..profile.space().len())
                    .map(|x| {
                        let s = profile.space().get(x).state;
                        (0..game.n_actions(i)).map(|a| game.reward(s, a, i)).collect()
                    })
                    .collect(),
                game.gamma(),
                profile.space().roots().to_vec(),
            )?;
            let best = crate::mdp::value_iteration(&solo, CERT_EPSILON);
            exploitability.push(gap(&best.values, &profile.values[i], &on_path));
            continue;
        }
        let opp = joint_opponent(game, i, &others)?;
        let br = best_response_in(game, i, &opp, profile.space().clone(), CERT_EPSILON)?;
        exploitability.push(gap(&br.values.values, &profile.values[i], &on_path));
    }
    let is_ne = exploitability.iter().all(|&e| e <= epsilon_ne);
    Ok(NeCheck { is_ne, exploitability })
}

fn gap(best: &[f64], own: &[f64], mask: &[bool]) -> f64 {
    best.iter()
        .zip(own)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((b, o), _)| b - o)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct NeOptions {
    pub max_iters: usize,
    pub epsilon_fix: f64,
    pub epsilon_ne: f64,
    /// Weight λ of Γ in `λΓ(π) + (1−λ)π`.
    pub damping: f64,
    /// Tolerance of the per-iteration joint evaluation.
    pub eval_epsilon: f64,
    /// Record `‖Γ(π) − π‖∞` every this many iterations (0 disables).
    pub trace_every: usize,
}

impl Default for NeOptions {
    fn default() -> Self {
        NeOptions {
            max_iters: 100_000,
            epsilon_fix: 1e-8,
            epsilon_ne: 1e-6,
            damping: 1.0,
            eval_epsilon: 1e-10,
            trace_every: 1,
        }
    }
}

/// Which version of the final iterate was certified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purification {
    /// The iterate itself.
    Raw,
    /// The iterate with probabilities below 1e-3 removed.
    Snapped,
    /// The greedy pure profile of the iterate.
    Greedy,
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub converged: bool,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub is_ne: bool,
    pub exploitability: Vec<f64>,
    pub max_exploitability: f64,
    pub purification: Purification,
}

#[derive(Clone, Debug, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct NeResult {
    pub profile: StrategyProfile,
    pub certificate: Certificate,
    pub trace: Vec<TracePoint>,
}

fn snap(probs: &ProfileTables) -> ProfileTables {
    probs
        .iter()
        .map(|rows| {
            rows.iter()
                .map(|row| {
                    let kept: Vec<f64> = row
                        .iter()
                        .map(|&p| if p < SNAP_THRESHOLD { 0.0 } else { p })
                        .collect();
                    let total: f64 = kept.iter().sum();
                    if total > 0.0 {
                        kept.iter().map(|p| p / total).collect()
                    } else {
                        one_hot(row.len(), argmax(row))
                    }
                })
                .collect()
        })
        .collect()
}

fn greedy(probs: &ProfileTables) -> ProfileTables {
    probs
        .iter()
        .map(|rows| rows.iter().map(|row| one_hot(row.len(), argmax(row))).collect())
        .collect()
}

/// Iterates the refinement map from `init` until it stops moving, then
/// certifies the result with exact best responses.
///
/// Γ need not contract, so non-convergence is reported in the certificate
/// rather than raised. The iterate typically approaches a pure equilibrium
/// only at a sublinear rate; before certifying, the raw iterate, a version
/// with negligible probabilities removed and the greedy pure profile are
/// tried in that order and the first one that certifies is returned.
pub fn find_ne(
    game: &StochasticGame,
    k: usize,
    init: &[KMemoryStrategy],
    options: &NeOptions,
) -> Result<NeResult> {
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::mismatch("damping must lie in (0, 1]"));
    }
    let space = game_space(game, k)?;
    check_profile(game, init, k)?;
    let probs = init
        .iter()
        .map(|s| s.materialize(&space))
        .collect::<Result<ProfileTables>>()?;
    find_ne_from_tables(game, space, probs, options)
}

fn find_ne_from_tables(
    game: &StochasticGame,
    space: Arc<AugSpace>,
    mut probs: ProfileTables,
    options: &NeOptions,
) -> Result<NeResult> {
    let model = JointModel::new(game, space);
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..options.max_iters.max(1) {
        let (values, q) = evaluate_tables(game, &model, &probs, warm.take(), options.eval_epsilon);
        let phi = advantage_of(&values, &q);
        let next = refine_tables(&probs, &phi, 1.0);
        residual = table_distance(&probs, &next, None);
        iterations = it + 1;
        if options.trace_every > 0 && it % options.trace_every == 0 {
            trace.push(TracePoint {
                iteration: it,
                residual,
            });
        }
        if residual <= options.epsilon_fix {
            converged = true;
            break;
        }
        probs = if options.damping == 1.0 {
            next
        } else {
            refine_tables(&probs, &phi, options.damping)
        };
        warm = Some(values);
        if it + 1 == options.max_iters {
            break;
        }
    }

    let candidates = [
        (Purification::Raw, probs.clone()),
        (Purification::Snapped, snap(&probs)),
        (Purification::Greedy, greedy(&probs)),
    ];
    let mut fallback: Option<(StrategyProfile, NeCheck)> = None;
    for (kind, tables) in candidates {
        let profile = profile_from_tables(game, model.clone(), tables, None, CERT_EPSILON)?;
        let check = verify_profile(game, &profile, options.epsilon_ne)?;
        if check.is_ne {
            return Ok(NeResult {
                certificate: certificate(converged, iterations, residual, &check, kind),
                profile,
                trace,
            });
        }
        if fallback.is_none() {
            fallback = Some((profile, check));
        }
    }
    let (profile, check) = fallback.expect("at least one candidate");
    Ok(NeResult {
        certificate: certificate(converged, iterations, residual, &check, Purification::Raw),
        profile,
        trace,
    })
}

fn certificate(
    converged: bool,
    iterations: usize,
    residual: f64,
    check: &NeCheck,
    purification: Purification,
) -> Certificate {
    Certificate {
        converged,
        iterations,
        fixed_point_residual: residual,
        is_ne: check.is_ne,
        max_exploitability: check.max_exploitability(),
        exploitability: check.exploitability.clone(),
        purification,
    }
}

fn advantage_of(values: &[Vec<f64>], q: &ProfileTables) -> ProfileTables {
    q.iter()
        .zip(values)
        .map(|(qi, vi)| {
            qi.iter()
                .zip(vi)
                .map(|(row, &v)| row.iter().map(|&qa| (qa - v).max(0.0)).collect())
                .collect()
        })
        .collect()
}

/// Uniformly random behavioural tables over `space`, one per agent.
pub fn random_profile_tables(game: &StochasticGame, space: &AugSpace, rng: &mut impl Rng) -> ProfileTables {
    (0..game.n_agents())
        .map(|i| {
            (0..space.len())
                .map(|_| {
                    // Normalized exponentials give a uniform draw from the simplex.
                    let raw: Vec<f64> = (0..game.n_actions(i))
                        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                        .collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|r| r / total).collect()
                })
                .collect()
        })
        .collect()
}

/// Runs [`find_ne`] from the uniform profile and then from `starts − 1`
/// seeded random profiles, stopping at the first certified result. When
/// none certifies, the run with the lowest exploitability is returned.
pub fn find_ne_multistart(
    game: &StochasticGame,
    k: usize,
    starts: usize,
    seed: u64,
    options: &NeOptions,
) -> Result<Vec<NeResult>> {
    let space = game_space(game, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = Vec::new();
    for start in 0..starts.max(1) {
        let tables = if start == 0 {
            (0..game.n_agents())
                .map(|i| vec![vec![1.0 / game.n_actions(i) as f64; game.n_actions(i)]; space.len()])
                .collect()
        } else {
            random_profile_tables(game, &space, &mut rng)
        };
        let result = find_ne_from_tables(game, space.clone(), tables, options)?;
        let done = result.certificate.is_ne;
        runs.push(result);
        if done {
            break;
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::ipd::{make_ipd, PdPayoffs, COOPERATE, DEFECT};
    use crate::domains::strategies::{all_cooperate, all_defect, tit_for_tat};
    use crate::game::GameParts;

    fn ipd(gamma: f64) -> StochasticGame {
        make_ipd(PdPayoffs::default(), gamma).unwrap()
    }

    #[test]
    fn all_d_profile_is_worth_zero() {
        let p = joint_policy_evaluation(&ipd(0.9), 0, &[all_defect(0), all_defect(1)], 1e-12).unwrap();
        assert!(p.values.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn all_c_profile_is_worth_r_over_one_minus_gamma() {
        let p = joint_policy_evaluation(&ipd(0.9), 0, &[all_cooperate(0), all_cooperate(1)], 1e-12).unwrap();
        for v in p.values.iter().flatten() {
            assert!((v - 10.0).abs() < 1e-10);
        }
    }

    #[test]
    fn tft_profile_values() {
        let game = ipd(0.9);
        let p = joint_policy_evaluation(&game, 1, &[tit_for_tat(0), tit_for_tat(1)], 1e-12).unwrap();
        let space = p.space().clone();
        assert!((p.values[0][space.roots()[0]] - 10.0).abs() < 1e-9);
        // After (D, C) the two echo each other: agent 0 collects S, T, S, …
        let dc = game.joint_index(&[DEFECT, COOPERATE]);
        let x = space
            .index_of(&crate::game::AugmentedState::new(vec![crate::game::Step::new(0, dc)], 0))
            .unwrap();
        let expected = (-1.0 + 0.9 * 2.0) / (1.0 - 0.81);
        assert!((p.values[0][x] - expected).abs() < 1e-9);
    }

    #[test]
    fn advantage_is_non_negative_and_zero_at_all_d() {
        let p = joint_policy_evaluation(&ipd(0.9), 2, &[all_defect(0), all_defect(1)], 1e-12).unwrap();
        let phi = advantage(&p);
        assert!(phi.iter().flatten().flatten().all(|&f| f == 0.0));
        assert_eq!(fixed_point_residual(&p, None), 0.0);
    }

    #[test]
    fn refinement_arithmetic() {
        let probs = vec![vec![vec![0.5, 0.5]]];
        let phi = vec![vec![vec![0.0, 1.0]]];
        assert_eq!(refine_tables(&probs, &phi, 1.0), vec![vec![vec![0.25, 0.75]]]);
        let damped = refine_tables(&probs, &phi, 0.5);
        assert!((damped[0][0][1] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn all_c_is_exploitable_by_at_least_t_minus_r() {
        let check = verify_ne(&ipd(0.9), &[all_cooperate(0), all_cooperate(1)], 1e-6).unwrap();
        assert!(!check.is_ne);
        assert!(check.exploitability.iter().all(|&e| e >= 1.0 - 1e-9));
    }

    #[test]
    fn tft_pair_depends_on_patience() {
        let pair = [tit_for_tat(0), tit_for_tat(1)];
        assert!(verify_ne(&ipd(0.9), &pair, 1e-6).unwrap().is_ne);
        assert!(!verify_ne(&ipd(0.3), &pair, 1e-6).unwrap().is_ne);
    }

    #[test]
    fn zero_reward_game_is_a_fixed_point() {
        let game = StochasticGame::new(GameParts {
            agents: vec!["a".into(), "b".into()],
            states: vec!["s".into()],
            actions: vec![vec!["x".into(), "y".into()], vec!["x".into(), "y".into()]],
            transitions: vec![vec![vec![(0, 1.0)]; 4]],
            rewards: vec![vec![vec![0.0, 0.0]; 4]],
            gamma: 0.9,
            initial_states: vec![0],
        })
        .unwrap();
        let init = [KMemoryStrategy::uniform(0, 2), KMemoryStrategy::uniform(1, 2)];
        let out = find_ne(&game, 0, &init, &NeOptions::default()).unwrap();
        assert!(out.certificate.converged);
        assert_eq!(out.certificate.iterations, 1);
        assert_eq!(out.certificate.purification, Purification::Raw);
    }

    #[test]
    fn uniform_start_drifts_toward_defection() {
        let game = ipd(0.9);
        let space = game_space(&game, 0).unwrap();
        let model = JointModel::new(&game, space);
        let mut probs: ProfileTables = vec![vec![vec![0.5, 0.5]]; 2];
        let mut last = 0.5;
        for _ in 0..50 {
            let (v, q) = evaluate_tables(&game, &model, &probs, None, 1e-12);
            probs = refine_tables(&probs, &advantage_of(&v, &q), 1.0);
            assert!(probs[0][0][DEFECT] > last);
            last = probs[0][0][DEFECT];
        }
    }

    #[test]
    fn finds_all_d_at_zero_memory() {
        let game = ipd(0.9);
        let init = [KMemoryStrategy::uniform(0, 2), KMemoryStrategy::uniform(1, 2)];
        let out = find_ne(&game, 0, &init, &NeOptions::default()).unwrap();
        assert!(out.certificate.is_ne);
        assert!(out.certificate.max_exploitability <= 1e-6);
        for p in &out.profile.probs {
            assert!(p[0][DEFECT] > 0.999);
        }
    }
}
