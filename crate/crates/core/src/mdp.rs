//! Tabular MDPs, the history-augmented MDP `M^K(π₋ᵢ)` induced by fixed
//! opponents, and exact solvers for it.

use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{game_space, AugSpace, StochasticGame};
use crate::strategy::{check_distribution, KMemoryStrategy};

/// Tolerance on transition row sums of a [`TabularMdp`].
pub const MDP_ROW_TOLERANCE: f64 = 1e-9;

/// A finite discounted MDP with sparse transition rows.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    n_actions: usize,
    // [state][action] -> (successor, probability), sorted by successor
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    // [state][action]
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    roots: Vec<usize>,
}

impl TabularMdp {
    pub fn new(
        n_actions: usize,
        transitions: Vec<Vec<Vec<(usize, f64)>>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        roots: Vec<usize>,
    ) -> Result<Self> {
        let n = transitions.len();
        if n == 0 || n_actions == 0 {
            return Err(Error::mismatch("an MDP needs at least one state and one action"));
        }
        if rewards.len() != n {
            return Err(Error::mismatch("reward table does not match the state count"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::mismatch(format!("discount {gamma} is outside [0, 1)")));
        }
        let mut clean = Vec::with_capacity(n);
        for (s, rows) in transitions.into_iter().enumerate() {
            if rows.len() != n_actions || rewards[s].len() != n_actions {
                return Err(Error::mismatch(format!("state {s} does not list {n_actions} actions")));
            }
            if rewards[s].iter().any(|r| !r.is_finite()) {
                return Err(Error::mismatch(format!("state {s} has a non-finite reward")));
            }
            let mut out = Vec::with_capacity(n_actions);
            for (a, row) in rows.into_iter().enumerate() {
                let row = merge_row(row);
                let total: f64 = row.iter().map(|(_, p)| p).sum();
                if row.iter().any(|&(t, p)| t >= n || p < 0.0 || !p.is_finite())
                    || (total - 1.0).abs() > MDP_ROW_TOLERANCE
                {
                    return Err(Error::mismatch(format!(
                        "transition row ({s}, {a}) is not a distribution over the states"
                    )));
                }
                out.push(row);
            }
            clean.push(out);
        }
        if roots.is_empty() || roots.iter().any(|&r| r >= n) {
            return Err(Error::mismatch("root states must be non-empty and in range"));
        }
        Ok(TabularMdp {
            n_actions,
            transitions: clean,
            rewards,
            gamma,
            roots,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn transition(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transitions[state][action]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state][action]
    }

    /// Probability of moving from `state` to `next` under `action`.
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        let row = &self.transitions[state][action];
        row.binary_search_by_key(&next, |&(t, _)| t)
            .map_or(0.0, |i| row[i].1)
    }

    pub fn reward_bound(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .fold(0.0f64, |acc, r| acc.max(r.abs()))
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::mismatch(format!("discount {gamma} is outside [0, 1)")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    fn q(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        let future: f64 = self.transitions[state][action]
            .iter()
            .map(|&(t, p)| p * values[t])
            .sum();
        self.rewards[state][action] + self.gamma * future
    }

    /// `Q(s, a) = R(s, a) + γ Σ T(s'|s, a) V(s')` for every pair.
    pub fn q_values(&self, values: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|s| (0..self.n_actions).map(|a| self.q(s, a, values)).collect())
            .collect()
    }

    /// States reachable from the roots when actions are drawn from `policy`
    /// (`None` allows every action).
    pub fn reachable(&self, policy: Option<&[Vec<f64>]>) -> Vec<bool> {
        let mut seen = vec![false; self.n_states()];
        let mut stack: Vec<usize> = self.roots.clone();
        for &r in &self.roots {
            seen[r] = true;
        }
        while let Some(s) = stack.pop() {
            for a in 0..self.n_actions {
                if let Some(pi) = policy {
                    if pi[s][a] <= 0.0 {
                        continue;
                    }
                }
                for &(t, _) in &self.transitions[s][a] {
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        seen
    }
}

fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.retain(|&(_, p)| p != 0.0);
    row.sort_by_key(|&(t, _)| t);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (t, p) in row {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 += p,
            _ => out.push((t, p)),
        }
    }
    out
}

/// A value function over the states of an MDP, with the convergence record
/// of the iteration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    /// Sup-norm size of the final update.
    pub residual: f64,
    /// Sup-norm size of every update, in order.
    pub trace: Vec<f64>,
}

impl ValueTable {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Smallest residual that can reliably be reached in double precision for
/// values of magnitude `scale`.
fn residual_floor(scale: f64) -> f64 {
    8.0 * f64::EPSILON * scale.max(1.0)
}

fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Synchronous value iteration from the zero table. Stops once successive
/// iterates differ by at most `ε(1−γ)/(2γ)` in sup norm, which bounds the
/// distance to the optimum by `ε`. A zero discount takes a single backup.
pub fn value_iteration(mdp: &TabularMdp, epsilon: f64) -> ValueTable {
    value_iteration_from(mdp, epsilon, vec![0.0; mdp.n_states()])
}

/// [`value_iteration`] started from `init`.
pub fn value_iteration_from(mdp: &TabularMdp, epsilon: f64, init: Vec<f64>) -> ValueTable {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let gamma = mdp.gamma;
    let threshold = if gamma > 0.0 {
        epsilon * (1.0 - gamma) / (2.0 * gamma)
    } else {
        f64::INFINITY
    };
    let mut values = init;
    let mut next = vec![0.0; values.len()];
    let mut trace = Vec::new();
    loop {
        let mut residual = 0.0f64;
        for (s, slot) in next.iter_mut().enumerate() {
            let best = (0..mdp.n_actions)
                .map(|a| mdp.q(s, a, &values))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - values[s]).abs());
            *slot = best;
        }
        std::mem::swap(&mut values, &mut next);
        trace.push(residual);
        if residual <= threshold.max(residual_floor(sup_norm(&values))) {
            return ValueTable {
                values,
                residual,
                trace,
            };
        }
    }
}

/// Iterative evaluation of a stochastic policy (`policy[s][a]`). Stops once
/// successive iterates differ by at most `ε(1−γ)/γ`.
pub fn policy_evaluation_table(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    epsilon: f64,
    init: Option<Vec<f64>>,
) -> ValueTable {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let gamma = mdp.gamma;
    let threshold = if gamma > 0.0 {
        epsilon * (1.0 - gamma) / gamma
    } else {
        f64::INFINITY
    };
    // Collapse the policy into a Markov chain once.
    let mut chain: Vec<Vec<(usize, f64)>> = Vec::with_capacity(mdp.n_states());
    let mut reward = Vec::with_capacity(mdp.n_states());
    for (s, pi) in policy.iter().enumerate() {
        let mut row = Vec::new();
        let mut r = 0.0;
        for (a, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            r += p * mdp.rewards[s][a];
            row.extend(mdp.transitions[s][a].iter().map(|&(t, q)| (t, p * q)));
        }
        chain.push(merge_row(row));
        reward.push(r);
    }
    let mut values = init.unwrap_or_else(|| vec![0.0; mdp.n_states()]);
    let mut next = vec![0.0; values.len()];
    let mut trace = Vec::new();
    loop {
        let mut residual = 0.0f64;
        for (s, slot) in next.iter_mut().enumerate() {
            let future: f64 = chain[s].iter().map(|&(t, p)| p * values[t]).sum();
            let v = reward[s] + gamma * future;
            residual = residual.max((v - values[s]).abs());
            *slot = v;
        }
        std::mem::swap(&mut values, &mut next);
        trace.push(residual);
        if residual <= threshold.max(residual_floor(sup_norm(&values))) {
            return ValueTable {
                values,
                residual,
                trace,
            };
        }
    }
}

/// Greedy actions with respect to `values`; the lowest index wins ties.
pub fn greedy_actions(mdp: &TabularMdp, values: &[f64]) -> Vec<usize> {
    (0..mdp.n_states())
        .map(|s| {
            let qs: Vec<f64> = (0..mdp.n_actions).map(|a| mdp.q(s, a, values)).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * best.abs().max(1.0);
            qs.iter().position(|&q| q >= best - tol).unwrap_or(0)
        })
        .collect()
}

/// The MDP `M^K(π₋ᵢ)` faced by `agent` when every other agent follows a
/// fixed K-memory strategy. Its states are the augmented states of `space`.
#[derive(Clone, Debug)]
pub struct InducedMdp {
    mdp: TabularMdp,
    space: Arc<AugSpace>,
    agent: usize,
}

impl Deref for InducedMdp {
    type Target = TabularMdp;

    fn deref(&self) -> &TabularMdp {
        &self.mdp
    }
}

impl InducedMdp {
    pub fn space(&self) -> &Arc<AugSpace> {
        &self.space
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    /// Wraps per-state actions as a deterministic table strategy.
    pub fn strategy_from_actions(&self, actions: &[usize]) -> Result<KMemoryStrategy> {
        let n = self.mdp.n_actions;
        let rows = self
            .space
            .states()
            .iter()
            .zip(actions)
            .map(|(aug, &a)| (aug.clone(), crate::strategy::one_hot(n, a)));
        KMemoryStrategy::from_table(self.agent, self.space.memory(), n, rows)
    }

    /// Values at the empty-history roots, in initial-state order.
    pub fn root_values(&self, values: &ValueTable) -> Vec<f64> {
        self.space.roots().iter().map(|&r| values.values[r]).collect()
    }
}

/// Builds `M^K(π₋ᵢ)` over the game's own reachable space at the opponents'
/// memory.
pub fn build_induced_mdp(
    game: &StochasticGame,
    agent: usize,
    opponents: &KMemoryStrategy,
) -> Result<InducedMdp> {
    let space = game_space(game, opponents.memory())?;
    build_induced_mdp_in(game, agent, opponents, space)
}

/// Builds `M^K(π₋ᵢ)` over a caller-supplied space, whose memory may exceed
/// the opponents' memory.
///
/// `T^K(H', S' | H, S, aᵢ) = Σ T(S'|S, a) π₋ᵢ(a₋ᵢ|H, S)` over opponent
/// actions with `H' = slide_k(H, S, a)`, and
/// `R^K(H, S, aᵢ) = Σ R_i(S, a) π₋ᵢ(a₋ᵢ|H, S)`.
pub fn build_induced_mdp_in(
    game: &StochasticGame,
    agent: usize,
    opponents: &KMemoryStrategy,
    space: Arc<AugSpace>,
) -> Result<InducedMdp> {
    if agent >= game.n_agents() {
        return Err(Error::mismatch(format!("unknown agent {agent}")));
    }
    if opponents.agents() != game.others(agent).as_slice() {
        return Err(Error::mismatch(format!(
            "opponent strategy controls agents {:?}, expected {:?}",
            opponents.agents(),
            game.others(agent)
        )));
    }
    let n_opp = game.n_opponent_joint(agent);
    if opponents.n_actions() != n_opp {
        return Err(Error::mismatch(format!(
            "opponent strategy has {} joint actions, game has {n_opp}",
            opponents.n_actions()
        )));
    }
    if space.memory() < opponents.memory() {
        return Err(Error::mismatch(format!(
            "space memory {} is shorter than opponent memory {}",
            space.memory(),
            opponents.memory()
        )));
    }
    let n_own = game.n_actions(agent);
    let mut transitions = Vec::with_capacity(space.len());
    let mut rewards = Vec::with_capacity(space.len());
    for (idx, aug) in space.states().iter().enumerate() {
        let probs = opponents.probs_at(aug)?;
        check_distribution(&probs, n_opp)
            .map_err(|m| Error::spec(format!("opponent strategy at {aug}"), m))?;
        let mut t_rows = Vec::with_capacity(n_own);
        let mut r_row = Vec::with_capacity(n_own);
        for own in 0..n_own {
            let mut row = Vec::new();
            let mut reward = 0.0;
            for (opp, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let joint = game.compose(agent, own, opp);
                reward += p * game.reward(aug.state, joint, agent);
                for &(next, q) in game.successors(aug.state, joint) {
                    row.push((space.successor(idx, joint, next), p * q));
                }
            }
            t_rows.push(row);
            r_row.push(reward);
        }
        transitions.push(t_rows);
        rewards.push(r_row);
    }
    let mdp = TabularMdp::new(n_own, transitions, rewards, game.gamma(), space.roots().to_vec())?;
    Ok(InducedMdp { mdp, space, agent })
}

/// Deterministic greedy strategy for an induced MDP.
pub fn extract_policy(mdp: &InducedMdp, values: &ValueTable) -> Result<KMemoryStrategy> {
    mdp.strategy_from_actions(&greedy_actions(mdp, &values.values))
}

/// Evaluates `strategy` (agent `mdp.agent()`) in the induced MDP.
pub fn policy_evaluation(
    mdp: &InducedMdp,
    strategy: &KMemoryStrategy,
    epsilon: f64,
) -> Result<ValueTable> {
    if strategy.agents() != [mdp.agent()] {
        return Err(Error::mismatch("strategy does not control the induced MDP's agent"));
    }
    let policy = strategy.materialize(&mdp.space)?;
    Ok(policy_evaluation_table(mdp, &policy, epsilon, None))
}

/// An exact best response together with the MDP it was computed in.
#[derive(Clone, Debug)]
pub struct BestResponse {
    pub strategy: KMemoryStrategy,
    pub actions: Vec<usize>,
    pub values: ValueTable,
    pub mdp: InducedMdp,
}

impl BestResponse {
    pub fn root_values(&self) -> Vec<f64> {
        self.mdp.root_values(&self.values)
    }
}

/// Builds the induced MDP, solves it by value iteration and extracts the
/// greedy deterministic strategy.
pub fn best_response(
    game: &StochasticGame,
    agent: usize,
    opponents: &KMemoryStrategy,
    epsilon: f64,
) -> Result<BestResponse> {
    let mdp = build_induced_mdp(game, agent, opponents)?;
    Ok(solve_induced(mdp, epsilon))
}

/// [`best_response`] over a caller-supplied space.
pub fn best_response_in(
    game: &StochasticGame,
    agent: usize,
    opponents: &KMemoryStrategy,
    space: Arc<AugSpace>,
    epsilon: f64,
) -> Result<BestResponse> {
    let mdp = build_induced_mdp_in(game, agent, opponents, space)?;
    Ok(solve_induced(mdp, epsilon))
}

fn solve_induced(mdp: InducedMdp, epsilon: f64) -> BestResponse {
    let values = value_iteration(&mdp, epsilon);
    let actions = greedy_actions(&mdp, &values.values);
    let strategy = mdp
        .strategy_from_actions(&actions)
        .expect("greedy rows are valid distributions");
    BestResponse {
        strategy,
        actions,
        values,
        mdp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::ipd::{make_ipd, PdPayoffs, COOPERATE, DEFECT};
    use crate::domains::strategies::{all_cooperate, all_defect, n_tits_for_m_tats, tit_for_tat};

    fn ipd(gamma: f64) -> StochasticGame {
        make_ipd(PdPayoffs::default(), gamma).unwrap()
    }

    fn single_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, vec![vec![vec![(0, 1.0)]]], vec![vec![reward]], gamma, vec![0]).unwrap()
    }

    #[test]
    fn constant_reward_is_geometric() {
        let v = value_iteration(&single_state(3.0, 0.8), 1e-10);
        assert!((v.values[0] - 15.0).abs() <= 1e-10);
    }

    #[test]
    fn zero_discount_is_one_backup() {
        let v = value_iteration(&single_state(-2.0, 0.0), 1e-6);
        assert_eq!(v.values, vec![-2.0]);
        assert_eq!(v.iterations(), 1);
    }

    #[test]
    fn residuals_contract_by_gamma() {
        let gamma = 0.9;
        let mdp = build_induced_mdp(&ipd(gamma), 0, &n_tits_for_m_tats(1, 2, 2)).unwrap();
        let v = value_iteration(&mdp, 1e-9);
        for w in v.trace.windows(2) {
            assert!(w[1] <= gamma * w[0] + 1e-12, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn all_c_opponent_rewards() {
        let mdp = build_induced_mdp(&ipd(0.9), 0, &all_cooperate(1)).unwrap();
        assert_eq!(mdp.n_states(), 1);
        assert_eq!(mdp.reward(0, DEFECT), 2.0);
        assert_eq!(mdp.reward(0, COOPERATE), 1.0);
    }

    #[test]
    fn uniform_opponent_averages_columns() {
        let game = ipd(0.9);
        let mdp = build_induced_mdp(&game, 0, &KMemoryStrategy::uniform(1, 2)).unwrap();
        assert!((mdp.reward(0, COOPERATE) - 0.0).abs() < 1e-15);
        assert!((mdp.reward(0, DEFECT) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tft_induced_mdp_follows_own_defection() {
        let game = ipd(0.9);
        let mdp = build_induced_mdp(&game, 0, &tit_for_tat(1)).unwrap();
        assert_eq!(mdp.n_states(), 5);
        let space = mdp.space().clone();
        for (idx, aug) in space.states().iter().enumerate() {
            let Some(last) = aug.history.last() else { continue };
            let my_last = game.action_of(last.joint, 0);
            for a in 0..2 {
                let row = mdp.transition(idx, a);
                assert_eq!(row.len(), 1);
                let next = space.get(row[0].0);
                let step = next.history[0];
                assert_eq!(game.action_of(step.joint, 1), my_last);
                assert_eq!(game.action_of(step.joint, 0), a);
            }
        }
    }

    #[test]
    fn br_to_all_d_is_all_d() {
        let br = best_response(&ipd(0.9), 0, &all_defect(1), 1e-9).unwrap();
        assert_eq!(br.actions, vec![DEFECT]);
        assert!(br.root_values()[0].abs() < 1e-9);
    }

    #[test]
    fn extracted_policy_evaluates_to_optimum() {
        let game = ipd(0.9);
        let br = best_response(&game, 0, &n_tits_for_m_tats(1, 2, 2), 1e-8).unwrap();
        let eval = policy_evaluation(&br.mdp, &br.strategy, 1e-8).unwrap();
        for (a, b) in eval.values.iter().zip(&br.values.values) {
            assert!((a - b).abs() <= 2e-8);
        }
    }

    #[test]
    fn all_c_against_all_c() {
        let game = ipd(0.9);
        let mdp = build_induced_mdp(&game, 0, &all_cooperate(1)).unwrap();
        let v = policy_evaluation(&mdp, &all_cooperate(0), 1e-10).unwrap();
        assert!((v.values[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ties_go_to_the_lowest_action() {
        let mdp = TabularMdp::new(
            3,
            vec![vec![vec![(0, 1.0)]; 3]],
            vec![vec![1.0, 1.0, 1.0]],
            0.5,
            vec![0],
        )
        .unwrap();
        let v = value_iteration(&mdp, 1e-9);
        assert_eq!(greedy_actions(&mdp, &v.values), vec![0]);
    }

    #[test]
    fn opponent_outside_table_is_an_error() {
        let game = ipd(0.9);
        let opp = KMemoryStrategy::from_table(
            1,
            1,
            2,
            vec![(crate::game::AugmentedState::root(0), vec![1.0, 0.0])],
        )
        .unwrap();
        let err = build_induced_mdp(&game, 0, &opp).unwrap_err();
        assert!(matches!(err, Error::UndefinedState { .. }));
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMdp::new(1, vec![vec![vec![(0, 0.5)]]], vec![vec![0.0]], 0.5, vec![0]);
        assert!(err.is_err());
    }
}
