//! Finite stochastic games, bounded histories and the augmented state space
//! `H^{≤K} × S` that every solver in this crate works over.
//!
//! Joint actions are encoded as a single mixed-radix index with agent 0 as
//! the most significant digit, so `(a_0, …, a_{n-1})` maps to
//! `Σ_j a_j · stride_j` where `stride_{n-1} = 1`. All orderings (states,
//! agents, actions) follow declaration order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Tolerance used when validating probability vectors.
pub const PROB_TOLERANCE: f64 = 1e-12;

/// Default cap on the number of augmented states an enumeration may produce.
pub const DEFAULT_STATE_CAP: usize = 5_000_000;

/// One recorded step of play: the environmental state and the joint action
/// taken in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub state: usize,
    pub joint: usize,
}

impl Step {
    pub fn new(state: usize, joint: usize) -> Self {
        Step { state, joint }
    }
}

/// A bounded window of past steps. The oldest entry is dropped once the
/// window holds `capacity` entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct History {
    entries: Vec<Step>,
    capacity: usize,
}

impl History {
    pub fn empty(capacity: usize) -> Self {
        History {
            entries: Vec::new(),
            capacity,
        }
    }

    /// Builds a history from the most recent `capacity` entries of `steps`.
    pub fn from_steps(steps: &[Step], capacity: usize) -> Self {
        let start = steps.len().saturating_sub(capacity);
        History {
            entries: steps[start..].to_vec(),
            capacity,
        }
    }

    pub fn entries(&self) -> &[Step] {
        &self.entries
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a step, discarding the oldest entry if the window overflows.
    pub fn push(&mut self, step: Step) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.remove(0);
        }
        self.entries.push(step);
    }
}

/// Appends `(state, joint)` to `history` and keeps the most recent `k`
/// entries. With `k = 0` the result is always empty.
pub fn slide_k(history: &History, state: usize, joint: usize, k: usize) -> History {
    let mut entries: Vec<Step> = Vec::with_capacity(k.min(history.len() + 1));
    let keep = k.saturating_sub(1).min(history.len());
    if k > 0 {
        entries.extend_from_slice(&history.entries[history.len() - keep..]);
        entries.push(Step::new(state, joint));
    }
    History {
        entries,
        capacity: k,
    }
}

/// Slides a raw step window; shared by the enumerator and the simulators.
pub(crate) fn slide_steps(history: &[Step], step: Step, k: usize) -> Vec<Step> {
    if k == 0 {
        return Vec::new();
    }
    let keep = (k - 1).min(history.len());
    let mut out = Vec::with_capacity(keep + 1);
    out.extend_from_slice(&history[history.len() - keep..]);
    out.push(step);
    out
}

/// A history window paired with the current environmental state.
///
/// Ordered by history length, then entry-wise by `(state, joint)` indices,
/// then by the current state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AugmentedState {
    pub history: Vec<Step>,
    pub state: usize,
}

impl AugmentedState {
    pub fn new(history: Vec<Step>, state: usize) -> Self {
        AugmentedState { history, state }
    }

    pub fn root(state: usize) -> Self {
        AugmentedState {
            history: Vec::new(),
            state,
        }
    }

    /// The same state seen through a shorter memory window.
    pub fn truncated(&self, k: usize) -> AugmentedState {
        let start = self.history.len().saturating_sub(k);
        AugmentedState {
            history: self.history[start..].to_vec(),
            state: self.state,
        }
    }
}

impl Ord for AugmentedState {
    fn cmp(&self, other: &Self) -> Ordering {
        self.history
            .len()
            .cmp(&other.history.len())
            .then_with(|| self.history.cmp(&other.history))
            .then_with(|| self.state.cmp(&other.state))
    }
}

impl PartialOrd for AugmentedState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AugmentedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (idx, step) in self.history.iter().enumerate() {
            if idx > 0 {
                write!(f, ", ")?;
            }
            write!(f, "s{}/{}", step.state, step.joint)?;
        }
        write!(f, "] @ s{}", self.state)
    }
}

/// A finite n-player stochastic game `⟨N, S, A, T, R, γ⟩`.
#[derive(Clone, Debug)]
pub struct StochasticGame {
    agents: Vec<String>,
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    strides: Vec<usize>,
    n_joint: usize,
    // [state][joint] -> sparse successor distribution
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    // [state][joint][agent]
    rewards: Vec<Vec<Vec<f64>>>,
    gamma: f64,
    initial_states: Vec<usize>,
}

/// Dense description of a game used by [`StochasticGame::new`]. Transition
/// and reward tables are indexed `[state][joint]`.
#[derive(Clone, Debug)]
pub struct GameParts {
    pub agents: Vec<String>,
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub initial_states: Vec<usize>,
}

impl StochasticGame {
    pub fn new(parts: GameParts) -> Result<Self> {
        let GameParts {
            agents,
            states,
            actions,
            transitions,
            rewards,
            gamma,
            initial_states,
        } = parts;

        if agents.is_empty() {
            return Err(Error::spec("agents", "at least one agent is required"));
        }
        if states.is_empty() {
            return Err(Error::spec("states", "at least one state is required"));
        }
        if actions.len() != agents.len() {
            return Err(Error::spec(
                "actions",
                format!("expected {} action lists, found {}", agents.len(), actions.len()),
            ));
        }
        for (i, list) in actions.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::spec(format!("actions[{i}]"), "empty action set"));
            }
        }
        if !(0.0..1.0).contains(&gamma) || !gamma.is_finite() {
            return Err(Error::spec("gamma", format!("{gamma} is outside [0, 1)")));
        }

        let mut strides = vec![1usize; actions.len()];
        for i in (0..actions.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * actions[i + 1].len();
        }
        let n_joint = strides[0] * actions[0].len();

        if transitions.len() != states.len() || rewards.len() != states.len() {
            return Err(Error::spec("transitions", "one table per state is required"));
        }
        let mut clean = Vec::with_capacity(states.len());
        for (s, per_joint) in transitions.into_iter().enumerate() {
            if per_joint.len() != n_joint {
                return Err(Error::spec(
                    format!("transitions[{s}]"),
                    format!("expected {n_joint} joint actions, found {}", per_joint.len()),
                ));
            }
            let mut rows = Vec::with_capacity(n_joint);
            for (j, row) in per_joint.into_iter().enumerate() {
                rows.push(normalize_row(row, states.len()).map_err(|msg| {
                    Error::spec(format!("transitions[{}][{}]", states[s], j), msg)
                })?);
            }
            clean.push(rows);
        }
        for (s, per_joint) in rewards.iter().enumerate() {
            if per_joint.len() != n_joint {
                return Err(Error::spec(
                    format!("rewards[{s}]"),
                    format!("expected {n_joint} joint actions"),
                ));
            }
            for (j, values) in per_joint.iter().enumerate() {
                if values.len() != agents.len() {
                    return Err(Error::spec(
                        format!("rewards[{s}][{j}]"),
                        "one reward per agent is required",
                    ));
                }
                if values.iter().any(|r| !r.is_finite()) {
                    return Err(Error::spec(format!("rewards[{s}][{j}]"), "non-finite reward"));
                }
            }
        }
        if initial_states.is_empty() {
            return Err(Error::spec("initial_states", "at least one initial state is required"));
        }
        if let Some(bad) = initial_states.iter().find(|&&s| s >= states.len()) {
            return Err(Error::spec("initial_states", format!("unknown state index {bad}")));
        }

        Ok(StochasticGame {
            agents,
            states,
            actions,
            strides,
            n_joint,
            transitions: clean,
            rewards,
            gamma,
            initial_states,
        })
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self, agent: usize) -> &[String] {
        &self.actions[agent]
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self, agent: usize) -> usize {
        self.actions[agent].len()
    }

    pub fn n_joint(&self) -> usize {
        self.n_joint
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_states(&self) -> &[usize] {
        &self.initial_states
    }

    /// A copy of the game with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::spec("gamma", format!("{gamma} is outside [0, 1)")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    pub fn with_initial_states(&self, initial: Vec<usize>) -> Result<Self> {
        if initial.is_empty() || initial.iter().any(|&s| s >= self.n_states()) {
            return Err(Error::spec("initial_states", "invalid initial state set"));
        }
        let mut out = self.clone();
        out.initial_states = initial;
        Ok(out)
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(&self.strides)
            .map(|(a, stride)| a * stride)
            .sum()
    }

    pub fn decode_joint(&self, joint: usize) -> Vec<usize> {
        (0..self.n_agents()).map(|i| self.action_of(joint, i)).collect()
    }

    pub fn action_of(&self, joint: usize, agent: usize) -> usize {
        (joint / self.strides[agent]) % self.actions[agent].len()
    }

    /// Agents other than `agent`, in declaration order.
    pub fn others(&self, agent: usize) -> Vec<usize> {
        (0..self.n_agents()).filter(|&j| j != agent).collect()
    }

    /// Size of the product action set of every agent except `agent`.
    pub fn n_opponent_joint(&self, agent: usize) -> usize {
        self.n_joint / self.actions[agent].len()
    }

    /// Combines `agent`'s action with a joint opponent action index (mixed
    /// radix over the other agents in order) into a full joint action.
    pub fn compose(&self, agent: usize, own: usize, opponent: usize) -> usize {
        let mut joint = own * self.strides[agent];
        let mut rest = opponent;
        for j in (0..self.n_agents()).rev() {
            if j == agent {
                continue;
            }
            let n = self.actions[j].len();
            joint += (rest % n) * self.strides[j];
            rest /= n;
        }
        joint
    }

    /// Inverse of [`compose`](Self::compose) for the opponent part.
    pub fn opponent_index(&self, agent: usize, joint: usize) -> usize {
        let mut idx = 0;
        for j in 0..self.n_agents() {
            if j == agent {
                continue;
            }
            idx = idx * self.actions[j].len() + self.action_of(joint, j);
        }
        idx
    }

    pub fn successors(&self, state: usize, joint: usize) -> &[(usize, f64)] {
        &self.transitions[state][joint]
    }

    pub fn reward(&self, state: usize, joint: usize, agent: usize) -> f64 {
        self.rewards[state][joint][agent]
    }

    /// Largest absolute stage reward over all agents.
    pub fn reward_bound(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |acc, r| acc.max(r.abs()))
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|s| s == name)
    }

    pub fn action_index(&self, agent: usize, name: &str) -> Option<usize> {
        self.actions[agent].iter().position(|s| s == name)
    }

    /// Human-readable joint action, e.g. `C, D`.
    pub fn joint_label(&self, joint: usize) -> String {
        (0..self.n_agents())
            .map(|i| self.actions[i][self.action_of(joint, i)].as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Renders a history window as a bracketed action list. Single-state
    /// games omit the state names.
    pub fn history_label(&self, history: &[Step]) -> String {
        let parts: Vec<String> = history
            .iter()
            .map(|step| {
                if self.n_states() == 1 {
                    self.joint_label(step.joint)
                } else {
                    format!("{}: {}", self.states[step.state], self.joint_label(step.joint))
                }
            })
            .collect();
        format!("[{}]", parts.join(", "))
    }

    pub fn aug_label(&self, aug: &AugmentedState) -> String {
        if self.n_states() == 1 {
            self.history_label(&aug.history)
        } else {
            format!("{} @ {}", self.history_label(&aug.history), self.states[aug.state])
        }
    }
}

fn normalize_row(row: Vec<(usize, f64)>, n_states: usize) -> std::result::Result<Vec<(usize, f64)>, String> {
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    let mut total = 0.0;
    for (next, p) in row {
        if next >= n_states {
            return Err(format!("unknown successor state index {next}"));
        }
        if !p.is_finite() || p < 0.0 {
            return Err(format!("invalid probability {p}"));
        }
        total += p;
        if p == 0.0 {
            continue;
        }
        match merged.iter_mut().find(|(s, _)| *s == next) {
            Some(entry) => entry.1 += p,
            None => merged.push((next, p)),
        }
    }
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(format!("probabilities sum to {total}, expected 1"));
    }
    merged.sort_by_key(|(s, _)| *s);
    Ok(merged)
}

/// The ordered set of augmented states reachable from the root states.
#[derive(Clone, Debug)]
pub struct AugSpace {
    memory: usize,
    states: Vec<AugmentedState>,
    index: HashMap<AugmentedState, usize>,
    roots: Vec<usize>,
}

impl AugSpace {
    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[AugmentedState] {
        &self.states
    }

    pub fn get(&self, idx: usize) -> &AugmentedState {
        &self.states[idx]
    }

    pub fn index_of(&self, aug: &AugmentedState) -> Option<usize> {
        self.index.get(aug).copied()
    }

    /// Indices of the empty-history roots, one per initial state, in the
    /// order the initial states were given.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn root_of(&self, state: usize) -> Option<usize> {
        self.index_of(&AugmentedState::root(state))
    }

    /// Successor index after `step` lands in `next`.
    pub fn successor(&self, from: usize, joint: usize, next: usize) -> usize {
        let aug = &self.states[from];
        let history = slide_steps(&aug.history, Step::new(aug.state, joint), self.memory);
        self.index[&AugmentedState::new(history, next)]
    }
}

/// Enumerates every augmented state reachable from `(⟨⟩, s₀)` for the given
/// initial states, under any joint action and any positive-probability
/// transition, in canonical order.
pub fn enumerate_aug_states(
    game: &StochasticGame,
    k: usize,
    initial_states: &[usize],
) -> Result<AugSpace> {
    enumerate_aug_states_capped(game, k, initial_states, state_cap())
}

/// Name of the environment variable that overrides [`DEFAULT_STATE_CAP`].
pub const STATE_CAP_ENV: &str = "KMEM_STATE_CAP";

/// The augmented-state cap in effect: `KMEM_STATE_CAP` when it holds a
/// positive integer, otherwise [`DEFAULT_STATE_CAP`].
pub fn state_cap() -> usize {
    std::env::var(STATE_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&c| c > 0)
        .unwrap_or(DEFAULT_STATE_CAP)
}

pub fn enumerate_aug_states_capped(
    game: &StochasticGame,
    k: usize,
    initial_states: &[usize],
    cap: usize,
) -> Result<AugSpace> {
    if initial_states.is_empty() {
        return Err(Error::mismatch("initial state set is empty"));
    }
    let mut seen: BTreeSet<AugmentedState> = BTreeSet::new();
    let mut queue: VecDeque<AugmentedState> = VecDeque::new();
    for &s in initial_states {
        if s >= game.n_states() {
            return Err(Error::mismatch(format!("unknown initial state {s}")));
        }
        let root = AugmentedState::root(s);
        if seen.insert(root.clone()) {
            queue.push_back(root);
        }
    }
    while let Some(aug) = queue.pop_front() {
        for joint in 0..game.n_joint() {
            let history = slide_steps(&aug.history, Step::new(aug.state, joint), k);
            for &(next, _) in game.successors(aug.state, joint) {
                let succ = AugmentedState::new(history.clone(), next);
                if !seen.contains(&succ) {
                    if seen.len() >= cap {
                        return Err(Error::SizeCap {
                            what: "augmented state space",
                            cap,
                        });
                    }
                    seen.insert(succ.clone());
                    queue.push_back(succ);
                }
            }
        }
    }
    let states: Vec<AugmentedState> = seen.into_iter().collect();
    let index: HashMap<AugmentedState, usize> = states
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), i))
        .collect();
    let roots = initial_states
        .iter()
        .map(|&s| index[&AugmentedState::root(s)])
        .collect();
    Ok(AugSpace {
        memory: k,
        states,
        index,
        roots,
    })
}

/// Convenience wrapper returning a shareable space rooted at the game's
/// initial states.
pub fn game_space(game: &StochasticGame, k: usize) -> Result<Arc<AugSpace>> {
    enumerate_aug_states(game, k, game.initial_states()).map(Arc::new)
}
