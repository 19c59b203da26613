//! Best responses to mixed strategies as a POMDP with a hidden, fixed
//! opponent type, solved by exact planning over the reachable beliefs.
//!
//! The hidden state is `(H, S, ι)`: the observable augmented state and the
//! index of the support member drawn before play. Transitions never change
//! `ι` and the observation is the projection onto `(H, S)`, so a belief is
//! just a reweighting of the support. Since each type induces an ordinary
//! MDP over the observable states, the reduced POMDP is stored as one
//! [`TabularMdp`] per type over a shared state space.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{game_space, AugSpace, StochasticGame};
use crate::mdp::{build_induced_mdp_in, TabularMdp};
use crate::mixed::MixedStrategy;

/// Default cap on the number of belief nodes the planner may expand.
pub const DEFAULT_NODE_CAP: usize = 2_000_000;

/// Beliefs are merged after rounding to this resolution.
const BELIEF_RESOLUTION: f64 = 1e12;

/// A POMDP whose hidden component is a type index fixed for the episode.
#[derive(Clone, Debug)]
pub struct ReducedPomdp {
    types: Vec<TabularMdp>,
    weights: Vec<f64>,
    space: Option<Arc<AugSpace>>,
}

impl ReducedPomdp {
    /// Builds the reduction from per-type MDPs over a common observable
    /// state space. Every type must agree on state count, action count,
    /// discount and roots.
    pub fn from_types(types: Vec<TabularMdp>, weights: Vec<f64>) -> Result<Self> {
        let first = types
            .first()
            .ok_or_else(|| Error::mismatch("at least one type is required"))?;
        if weights.len() != types.len() {
            return Err(Error::mismatch("one weight per type is required"));
        }
        for t in &types {
            if t.n_states() != first.n_states()
                || t.n_actions() != first.n_actions()
                || t.gamma() != first.gamma()
                || t.roots() != first.roots()
            {
                return Err(Error::mismatch("types do not share states, actions, discount and roots"));
            }
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::mismatch("type weights must be positive and sum to 1"));
        }
        Ok(ReducedPomdp {
            types,
            weights,
            space: None,
        })
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn types(&self) -> &[TabularMdp] {
        &self.types
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_observations(&self) -> usize {
        self.types[0].n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.types[0].n_actions()
    }

    pub fn gamma(&self) -> f64 {
        self.types[0].gamma()
    }

    pub fn roots(&self) -> &[usize] {
        self.types[0].roots()
    }

    /// The augmented state space when the POMDP came from a game.
    pub fn space(&self) -> Option<&Arc<AugSpace>> {
        self.space.as_ref()
    }

    /// `|observable states| × |support|`.
    pub fn n_hidden_states(&self) -> usize {
        self.n_observations() * self.n_types()
    }

    /// Successors of hidden state `(obs, ty)` under `action`; the type
    /// index is always preserved.
    pub fn hidden_transition(&self, obs: usize, ty: usize, action: usize) -> Vec<((usize, usize), f64)> {
        self.types[ty]
            .transition(obs, action)
            .iter()
            .map(|&(o, p)| ((o, ty), p))
            .collect()
    }

    /// The deterministic observation of a hidden state.
    pub fn observe(&self, hidden: (usize, usize)) -> usize {
        hidden.0
    }

    pub fn hidden_reward(&self, obs: usize, ty: usize, action: usize) -> f64 {
        self.types[ty].reward(obs, action)
    }

    fn reward_bound(&self) -> f64 {
        self.types.iter().map(|t| t.reward_bound()).fold(0.0, f64::max)
    }

    /// Smallest horizon `T` with `γ^T · R_max / (1−γ) ≤ ε`.
    pub fn effective_horizon(&self, epsilon: f64) -> usize {
        let gamma = self.gamma();
        let rmax = self.reward_bound();
        if gamma == 0.0 {
            return 1;
        }
        if rmax == 0.0 {
            return 0;
        }
        let mut tail = rmax / (1.0 - gamma);
        let mut t = 0;
        while tail > epsilon {
            tail *= gamma;
            t += 1;
        }
        t
    }

    /// Bayes update of `belief` after seeing `next` follow `obs` under
    /// `action`. Returns the observation probability and the posterior.
    pub fn update(&self, belief: &[f64], obs: usize, action: usize, next: usize) -> Result<(f64, Vec<f64>)> {
        let mut post: Vec<f64> = belief
            .iter()
            .zip(&self.types)
            .map(|(b, t)| if *b == 0.0 { 0.0 } else { b * t.prob(obs, action, next) })
            .collect();
        let total: f64 = post.iter().sum();
        if total <= 0.0 {
            return Err(Error::InconsistentObservation(format!(
                "{next} after observation {obs} and action {action}"
            )));
        }
        for p in &mut post {
            *p /= total;
        }
        Ok((total, post))
    }
}

/// Builds the reduced POMDP of `agent`'s best response to a mixture of
/// joint opponent strategies.
pub fn build_br_pomdp(game: &StochasticGame, agent: usize, mixed: &MixedStrategy) -> Result<ReducedPomdp> {
    if mixed.agents() != game.others(agent).as_slice() {
        return Err(Error::mismatch("mixture must control every other agent"));
    }
    let space = game_space(game, mixed.memory())?;
    let types = mixed
        .support()
        .iter()
        .map(|opp| Ok(build_induced_mdp_in(game, agent, opp, space.clone())?.mdp().clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut pomdp = ReducedPomdp::from_types(types, mixed.weights().to_vec())?;
    pomdp.space = Some(space);
    Ok(pomdp)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct NodeKey {
    remaining: usize,
    obs: usize,
    belief: Vec<i64>,
}

fn quantize(belief: &[f64]) -> Vec<i64> {
    belief.iter().map(|b| (b * BELIEF_RESOLUTION).round() as i64).collect()
}

/// A node of the belief tree: the observable state, the posterior over the
/// support and the number of steps taken.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BeliefNode {
    pub belief: Vec<f64>,
    pub observable: usize,
    pub depth: usize,
}

/// The planner's output: root values and the greedy action at every
/// expanded belief node.
#[derive(Clone, Debug)]
pub struct PomdpSolution {
    /// One value per root (initial state), in root order.
    pub root_values: Vec<f64>,
    pub horizon: usize,
    /// Number of distinct belief nodes expanded.
    pub nodes: usize,
    policy: HashMap<NodeKey, usize>,
    // [type][remaining][obs] greedy action once the type is known
    known_actions: Vec<Vec<Vec<usize>>>,
}

impl PomdpSolution {
    /// The planned action at a belief node, if the node was expanded.
    pub fn action(&self, node: &BeliefNode) -> Option<usize> {
        if node.depth >= self.horizon {
            return None;
        }
        let remaining = self.horizon - node.depth;
        if let Some(ty) = point_mass(&node.belief) {
            return self.known_actions.get(ty)?.get(remaining)?.get(node.observable).copied();
        }
        let key = NodeKey {
            remaining,
            obs: node.observable,
            belief: quantize(&node.belief),
        };
        self.policy.get(&key).copied()
    }
}

struct Planner<'a> {
    pomdp: &'a ReducedPomdp,
    // [type][remaining][obs] finite-horizon optimum of a known type
    known: Vec<Vec<Vec<f64>>>,
    known_actions: Vec<Vec<Vec<usize>>>,
    memo: HashMap<NodeKey, (f64, usize)>,
    cap: usize,
}

impl<'a> Planner<'a> {
    fn new(pomdp: &'a ReducedPomdp, horizon: usize, cap: usize) -> Self {
        let mut known = Vec::with_capacity(pomdp.n_types());
        let mut known_actions = Vec::with_capacity(pomdp.n_types());
        for t in &pomdp.types {
            let mut layers = vec![vec![0.0; t.n_states()]];
            let mut actions = vec![vec![0; t.n_states()]];
            for h in 1..=horizon {
                let q = t.q_values(&layers[h - 1]);
                let greedy: Vec<usize> = q.iter().map(|row| best_index(row)).collect();
                layers.push(q.iter().zip(&greedy).map(|(row, &a)| row[a]).collect());
                actions.push(greedy);
            }
            known.push(layers);
            known_actions.push(actions);
        }
        Planner {
            pomdp,
            known,
            known_actions,
            memo: HashMap::new(),
            cap,
        }
    }

    fn value(&mut self, remaining: usize, obs: usize, belief: &[f64]) -> Result<f64> {
        if remaining == 0 {
            return Ok(0.0);
        }
        let live: Vec<usize> = (0..belief.len()).filter(|&i| belief[i] > 0.0).collect();
        let key = NodeKey {
            remaining,
            obs,
            belief: quantize(belief),
        };
        if let Some(&(v, _)) = self.memo.get(&key) {
            return Ok(v);
        }
        if self.memo.len() >= self.cap {
            return Err(Error::SizeCap {
                what: "belief tree",
                cap: self.cap,
            });
        }
        let gamma = self.pomdp.gamma();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for a in 0..self.pomdp.n_actions() {
            let mut q = 0.0;
            let mut nexts: Vec<usize> = Vec::new();
            for &i in &live {
                let t = &self.pomdp.types[i];
                q += belief[i] * t.reward(obs, a);
                nexts.extend(t.transition(obs, a).iter().map(|&(o, _)| o));
            }
            nexts.sort_unstable();
            nexts.dedup();
            for next in nexts {
                let (p, post) = self.pomdp.update(belief, obs, a, next)?;
                let cont = match point_mass(&post) {
                    Some(ty) => self.known[ty][remaining - 1][next],
                    None => self.value(remaining - 1, next, &post)?,
                };
                q += gamma * p * cont;
            }
            if a == 0 || q > best.0 + 1e-12 * best.0.abs().max(1.0) {
                best = (q, a);
            }
        }
        self.memo.insert(key, best);
        Ok(best.0)
    }
}

fn best_index(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &q) in row.iter().enumerate().skip(1) {
        if q > row[best] + 1e-12 * row[best].abs().max(1.0) {
            best = a;
        }
    }
    best
}

fn point_mass(belief: &[f64]) -> Option<usize> {
    let mut found = None;
    for (i, &b) in belief.iter().enumerate() {
        if b > 0.0 {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

/// Plans to the effective horizon of `epsilon`, with a zero tail beyond it.
pub fn solve_br_pomdp(pomdp: &ReducedPomdp, epsilon: f64) -> Result<PomdpSolution> {
    solve_br_pomdp_horizon(pomdp, pomdp.effective_horizon(epsilon), DEFAULT_NODE_CAP)
}

/// Exact finite-horizon planning over the reachable belief tree.
///
/// Point-mass beliefs are resolved from precomputed finite-horizon values
/// of the known type, so only genuinely uncertain nodes are expanded.
pub fn solve_br_pomdp_horizon(pomdp: &ReducedPomdp, horizon: usize, node_cap: usize) -> Result<PomdpSolution> {
    let mut planner = Planner::new(pomdp, horizon, node_cap);
    let mut root_values = Vec::with_capacity(pomdp.roots().len());
    for &root in pomdp.roots() {
        let v = match point_mass(&pomdp.weights) {
            Some(ty) => planner.known[ty][horizon][root],
            None => planner.value(horizon, root, &pomdp.weights)?,
        };
        root_values.push(v);
    }
    let nodes = planner.memo.len();
    let policy = planner.memo.into_iter().map(|(k, (_, a))| (k, a)).collect();
    Ok(PomdpSolution {
        root_values,
        horizon,
        nodes,
        policy,
        known_actions: planner.known_actions,
    })
}

/// One step of a simulated match against a hidden type.
#[derive(Clone, Debug, Serialize)]
pub struct BeliefRecord {
    pub step: usize,
    pub observation: usize,
    pub action: usize,
    pub posterior: Vec<f64>,
}

/// Simulates the planned policy against support member `true_type` from
/// root `root_index` and records the posterior after every step. Beyond
/// the planned horizon the lowest action is played.
pub fn belief_trace(
    pomdp: &ReducedPomdp,
    solution: &PomdpSolution,
    true_type: usize,
    root_index: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<BeliefRecord>> {
    if true_type >= pomdp.n_types() {
        return Err(Error::mismatch(format!("unknown type {true_type}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut node = BeliefNode {
        belief: pomdp.weights.clone(),
        observable: pomdp.roots()[root_index],
        depth: 0,
    };
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let action = solution.action(&node).unwrap_or(0);
        let row = pomdp.types[true_type].transition(node.observable, action);
        let mut u: f64 = rng.gen();
        let mut next = row[row.len() - 1].0;
        for &(o, p) in row {
            if u < p {
                next = o;
                break;
            }
            u -= p;
        }
        let (_, post) = pomdp.update(&node.belief, node.observable, action, next)?;
        out.push(BeliefRecord {
            step,
            observation: next,
            action,
            posterior: post.clone(),
        });
        node = BeliefNode {
            belief: post,
            observable: next,
            depth: node.depth + 1,
        };
    }
    Ok(out)
}
