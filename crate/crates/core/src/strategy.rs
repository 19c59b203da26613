//! K-memory strategies: maps from `(history window, state)` to a
//! distribution over one agent's (or a group of agents') actions.
//!
//! A strategy looks at the most recent `lookback` entries of whatever
//! history it is shown, so a K-memory strategy can be queried with a longer
//! window and behaves exactly like it would on the truncation. This is what
//! makes [`lift_strategy`] a relabelling rather than a copy.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{AugSpace, AugmentedState, StochasticGame, Step, PROB_TOLERANCE};

type RuleFn = dyn Fn(&[Step], usize) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
enum Repr {
    Table(Arc<HashMap<AugmentedState, Vec<f64>>>),
    Rule(Arc<RuleFn>),
    Joint(Arc<Vec<KMemoryStrategy>>),
    Mixture(Arc<Vec<(f64, KMemoryStrategy)>>),
}

/// A bounded-memory behavioural strategy.
///
/// `agents` lists the agents whose actions the strategy chooses. Ordinary
/// strategies control one agent; the joint opponent built by
/// [`joint_opponent`] controls several and acts over their product action
/// set (mixed radix, first listed agent most significant).
#[derive(Clone)]
pub struct KMemoryStrategy {
    agents: Vec<usize>,
    memory: usize,
    lookback: usize,
    n_actions: usize,
    repr: Repr,
}

impl fmt::Debug for KMemoryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::Table(t) => format!("table({} rows)", t.len()),
            Repr::Rule(_) => "rule".to_string(),
            Repr::Joint(p) => format!("joint({} parts)", p.len()),
            Repr::Mixture(p) => format!("mixture({} parts)", p.len()),
        };
        f.debug_struct("KMemoryStrategy")
            .field("agents", &self.agents)
            .field("memory", &self.memory)
            .field("n_actions", &self.n_actions)
            .field("repr", &kind)
            .finish()
    }
}

pub(crate) fn check_distribution(probs: &[f64], n_actions: usize) -> std::result::Result<(), String> {
    if probs.len() != n_actions {
        return Err(format!("expected {n_actions} probabilities, found {}", probs.len()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < -PROB_TOLERANCE) {
        return Err("negative or non-finite probability".into());
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(format!("probabilities sum to {total}"));
    }
    Ok(())
}

impl KMemoryStrategy {
    /// Builds a strategy from an explicit table. Every row must be a valid
    /// distribution and every history no longer than `memory`.
    pub fn from_table(
        agent: usize,
        memory: usize,
        n_actions: usize,
        rows: impl IntoIterator<Item = (AugmentedState, Vec<f64>)>,
    ) -> Result<Self> {
        let mut table = HashMap::new();
        for (aug, probs) in rows {
            if aug.history.len() > memory {
                return Err(Error::mismatch(format!(
                    "history of length {} exceeds memory {memory}",
                    aug.history.len()
                )));
            }
            check_distribution(&probs, n_actions)
                .map_err(|msg| Error::spec(format!("table{aug}"), msg))?;
            table.insert(aug, probs);
        }
        Ok(KMemoryStrategy {
            agents: vec![agent],
            memory,
            lookback: memory,
            n_actions,
            repr: Repr::Table(Arc::new(table)),
        })
    }

    /// Builds a strategy from a rule over the last `memory` steps. The rule
    /// must return a distribution over `n_actions` actions.
    pub fn from_rule<F>(agent: usize, memory: usize, n_actions: usize, rule: F) -> Self
    where
        F: Fn(&[Step], usize) -> Vec<f64> + Send + Sync + 'static,
    {
        KMemoryStrategy {
            agents: vec![agent],
            memory,
            lookback: memory,
            n_actions,
            repr: Repr::Rule(Arc::new(rule)),
        }
    }

    /// A stationary strategy that plays `action` everywhere.
    pub fn constant(agent: usize, n_actions: usize, action: usize) -> Self {
        Self::from_rule(agent, 0, n_actions, move |_, _| one_hot(n_actions, action))
    }

    /// A stationary strategy that plays uniformly at random everywhere.
    pub fn uniform(agent: usize, n_actions: usize) -> Self {
        Self::from_rule(agent, 0, n_actions, move |_, _| vec![1.0 / n_actions as f64; n_actions])
    }

    /// A stationary strategy with the same distribution in every state.
    pub fn stationary(agent: usize, probs: Vec<f64>) -> Result<Self> {
        let n = probs.len();
        check_distribution(&probs, n).map_err(|m| Error::spec("probs", m))?;
        Ok(Self::from_rule(agent, 0, n, move |_, _| probs.clone()))
    }

    /// A stationary strategy whose distribution depends on the current state
    /// only; `rows[s]` is the distribution in state `s`.
    pub fn per_state(agent: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        for (s, row) in rows.iter().enumerate() {
            check_distribution(row, n).map_err(|m| Error::spec(format!("rows[{s}]"), m))?;
        }
        Ok(Self::from_rule(agent, 0, n, move |_, state| rows[state].clone()))
    }

    /// The state-wise weighted average `Σ w_ι π^ι` of strategies controlling
    /// the same agents. Weights must be non-negative and sum to one.
    pub fn weighted(parts: Vec<(f64, KMemoryStrategy)>) -> Result<Self> {
        let first = parts
            .first()
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::mismatch("a weighted strategy needs at least one part"))?;
        for (_, s) in &parts {
            if s.agents != first.agents || s.n_actions != first.n_actions {
                return Err(Error::mismatch("weighted parts control different action sets"));
            }
        }
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::mismatch("weights must be non-negative and sum to 1"));
        }
        let memory = parts.iter().map(|(_, s)| s.memory).max().unwrap_or(0);
        let lookback = parts.iter().map(|(_, s)| s.lookback).max().unwrap_or(0);
        Ok(KMemoryStrategy {
            agents: first.agents.clone(),
            memory,
            lookback,
            n_actions: first.n_actions,
            repr: Repr::Mixture(Arc::new(parts)),
        })
    }

    /// The agent this strategy controls. For joint strategies, the first of
    /// the controlled agents.
    pub fn agent(&self) -> usize {
        self.agents[0]
    }

    pub fn agents(&self) -> &[usize] {
        &self.agents
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// The action distribution after `history` (most recent last) in
    /// `state`. Only the last `memory` steps are consulted.
    pub fn probs(&self, history: &[Step], state: usize) -> Result<Cow<'_, [f64]>> {
        let start = history.len().saturating_sub(self.lookback);
        let window = &history[start..];
        match &self.repr {
            Repr::Table(table) => {
                let key = AugmentedState::new(window.to_vec(), state);
                match table.get(&key) {
                    Some(row) => Ok(Cow::Borrowed(row.as_slice())),
                    None => Err(Error::UndefinedState {
                        agents: self.agents.clone(),
                        state: key.to_string(),
                    }),
                }
            }
            Repr::Rule(rule) => Ok(Cow::Owned(rule(window, state))),
            Repr::Joint(parts) => {
                let mut out = vec![1.0];
                for part in parts.iter() {
                    let probs = part.probs(history, state)?;
                    let mut next = Vec::with_capacity(out.len() * probs.len());
                    for &p in &out {
                        for &q in probs.iter() {
                            next.push(p * q);
                        }
                    }
                    out = next;
                }
                Ok(Cow::Owned(out))
            }
            Repr::Mixture(parts) => {
                let mut out = vec![0.0; self.n_actions];
                for (w, part) in parts.iter() {
                    for (o, p) in out.iter_mut().zip(part.probs(history, state)?.iter()) {
                        *o += w * p;
                    }
                }
                Ok(Cow::Owned(out))
            }
        }
    }

    pub fn probs_at(&self, aug: &AugmentedState) -> Result<Cow<'_, [f64]>> {
        self.probs(&aug.history, aug.state)
    }

    /// The most likely action (lowest index on ties).
    pub fn action(&self, history: &[Step], state: usize) -> Result<usize> {
        let probs = self.probs(history, state)?;
        Ok(argmax(&probs))
    }

    /// Tabulates the strategy over `space`, validating every row.
    pub fn materialize(&self, space: &AugSpace) -> Result<Vec<Vec<f64>>> {
        if space.memory() < self.memory {
            return Err(Error::mismatch(format!(
                "space memory {} is shorter than strategy memory {}",
                space.memory(),
                self.memory
            )));
        }
        space
            .states()
            .iter()
            .map(|aug| {
                let probs = self.probs_at(aug)?;
                check_distribution(&probs, self.n_actions)
                    .map_err(|m| Error::spec(format!("strategy{aug}"), m))?;
                Ok(probs.into_owned())
            })
            .collect()
    }

    /// A table-backed copy over `space` (restricted to histories the
    /// strategy's own memory can see).
    pub fn to_table(&self, space: &AugSpace) -> Result<KMemoryStrategy> {
        if self.agents.len() != 1 {
            return Err(Error::mismatch("only single-agent strategies can be tabulated"));
        }
        let mut rows = HashMap::new();
        for aug in space.states() {
            let key = aug.truncated(self.lookback);
            if rows.contains_key(&key) {
                continue;
            }
            let probs = self.probs_at(aug)?.into_owned();
            rows.insert(key, probs);
        }
        let mut out = KMemoryStrategy::from_table(self.agents[0], self.lookback, self.n_actions, rows)?;
        out.memory = self.memory;
        Ok(out)
    }

    /// True when every tabulated row over `space` is a point mass.
    pub fn is_deterministic_on(&self, space: &AugSpace) -> Result<bool> {
        for aug in space.states() {
            let probs = self.probs_at(aug)?;
            if !probs.iter().any(|&p| (p - 1.0).abs() <= PROB_TOLERANCE) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Exact equality of behaviour over `space`.
    pub fn same_behaviour(&self, other: &KMemoryStrategy, space: &AugSpace) -> Result<bool> {
        if self.n_actions != other.n_actions {
            return Ok(false);
        }
        for aug in space.states() {
            if *self.probs_at(aug)? != *other.probs_at(aug)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Rows of a table-backed strategy in canonical order.
    pub fn table_rows(&self) -> Option<Vec<(AugmentedState, Vec<f64>)>> {
        match &self.repr {
            Repr::Table(table) => {
                let mut rows: Vec<_> = table.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                rows.sort_by(|a, b| a.0.cmp(&b.0));
                Some(rows)
            }
            _ => None,
        }
    }
}

pub(crate) fn one_hot(n: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[idx] = 1.0;
    v
}

/// Index of the largest entry; lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = idx;
        }
    }
    best
}

/// Relabels a K-memory strategy as a `k_prime`-memory strategy that only
/// consults the most recent K entries.
pub fn lift_strategy(strategy: &KMemoryStrategy, k_prime: usize) -> Result<KMemoryStrategy> {
    if k_prime < strategy.memory {
        return Err(Error::mismatch(format!(
            "cannot lift a {}-memory strategy to {k_prime}-memory",
            strategy.memory
        )));
    }
    let mut out = strategy.clone();
    out.memory = k_prime;
    Ok(out)
}

/// Views the opponents of `agent` as one "super-agent" over the product of
/// their action sets, with memory equal to the largest component memory.
///
/// Components act independently, so the joint distribution is the product
/// of the component distributions.
pub fn joint_opponent(
    game: &StochasticGame,
    agent: usize,
    strategies: &[KMemoryStrategy],
) -> Result<KMemoryStrategy> {
    let expected = game.others(agent);
    let mut sorted: Vec<&KMemoryStrategy> = strategies.iter().collect();
    sorted.sort_by_key(|s| s.agents[0]);
    let covered: Vec<usize> = sorted.iter().flat_map(|s| s.agents.iter().copied()).collect();
    if covered != expected {
        return Err(Error::mismatch(format!(
            "opponent strategies cover agents {covered:?}, expected exactly {expected:?}"
        )));
    }
    for s in &sorted {
        for &j in &s.agents {
            if s.agents.len() == 1 && s.n_actions != game.n_actions(j) {
                return Err(Error::mismatch(format!(
                    "strategy for agent {j} has {} actions, game has {}",
                    s.n_actions,
                    game.n_actions(j)
                )));
            }
        }
    }
    if sorted.len() == 1 {
        return Ok(sorted[0].clone());
    }
    let memory = sorted.iter().map(|s| s.memory).max().unwrap_or(0);
    let n_actions = sorted.iter().map(|s| s.n_actions).product();
    Ok(KMemoryStrategy {
        agents: covered,
        memory,
        lookback: memory,
        n_actions,
        repr: Repr::Joint(Arc::new(sorted.into_iter().cloned().collect())),
    })
}
