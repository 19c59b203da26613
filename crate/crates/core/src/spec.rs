//! JSON descriptions of games, strategies, mixtures and CMDPs.
//!
//! Validation failures are reported as [`Error::Spec`] with the key path
//! of the offending value, e.g. `transitions[3].next.s9`.
//!
//! Game files:
//!
//! ```json
//! {
//!   "agents": ["row", "col"],
//!   "states": ["s"],
//!   "actions": [["C", "D"], ["C", "D"]],
//!   "transitions": [{"state": "s", "action": ["C", "C"], "next": {"s": 1.0}}, ...],
//!   "rewards": [{"state": "s", "action": ["C", "C"], "values": [1.0, 1.0]}, ...],
//!   "gamma": 0.9,
//!   "initial_states": ["s"]
//! }
//! ```
//!
//! Every (state, joint action) pair needs exactly one transition record and
//! one reward record.
//!
//! Strategy files name the agent and either a builtin or an explicit table:
//!
//! ```json
//! {"agent": "col", "builtin": "ntfmt:2,2"}
//! {"agent": 1, "memory": 1, "table": [
//!   {"history": [], "state": "s", "probs": {"C": 1.0}},
//!   {"history": [{"state": "s", "action": ["D", "C"]}], "state": "s", "probs": {"D": 1.0}}
//! ]}
//! ```
//!
//! History steps and rows may omit `state` in single-state games, and
//! actions missing from `probs` have probability zero.
//!
//! Mixture files list support members with positive weights. Each member
//! gives one `strategy`, or `strategies` (one per opponent) when several
//! agents are mixed jointly:
//!
//! ```json
//! {"support": [{"name": "tft", "strategy": {"agent": 1, "builtin": "tft"}},
//!              {"name": "all-d", "strategy": {"agent": 1, "builtin": "all-d"}}],
//!  "weights": [0.5, 0.5]}
//! ```
//!
//! CMDP files share states and actions across `contexts`:
//!
//! ```json
//! {"states": ["s0", "s1"], "actions": ["x", "y"], "gamma": 0.9,
//!  "initial_states": ["s0"], "context_prior": [0.5, 0.5],
//!  "contexts": [{"name": "a",
//!                "transitions": [{"state": "s0", "action": "x", "next": {"s1": 1.0}}, ...],
//!                "rewards": [{"state": "s0", "action": "x", "value": 1.0}, ...]}, ...]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Cmdp, CmdpParts};
use crate::domains::strategies::{
    all_cooperate, all_defect, n_tits_for_m_tats, ntfmt_in_spirit, tit_for_tat, x_d_before_one_c,
};
use crate::error::{Error, Result};
use crate::game::{game_space, AugSpace, AugmentedState, GameParts, StochasticGame, Step};
use crate::mixed::MixedStrategy;
use crate::strategy::{joint_opponent, KMemoryStrategy};

/// Parses JSON, reporting the key path of any type or syntax error.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        Error::spec(path, err.into_inner().to_string())
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::from)
}

fn lookup(names: &[String], name: &str, path: impl FnOnce() -> String, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::spec(path(), format!("unknown {what} `{name}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub state: String,
    pub action: Vec<String>,
    pub next: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRecord {
    pub state: String,
    pub action: Vec<String>,
    pub values: Vec<f64>,
}

/// On-disk form of a [`StochasticGame`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub agents: Vec<String>,
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub transitions: Vec<TransitionRecord>,
    pub rewards: Vec<RewardRecord>,
    pub gamma: f64,
    pub initial_states: Vec<String>,
}

impl GameFile {
    pub fn from_game(game: &StochasticGame) -> Self {
        let names = |joint: usize| -> Vec<String> {
            (0..game.n_agents())
                .map(|i| game.actions(i)[game.action_of(joint, i)].clone())
                .collect()
        };
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..game.n_states() {
            for j in 0..game.n_joint() {
                transitions.push(TransitionRecord {
                    state: game.states()[s].clone(),
                    action: names(j),
                    next: game
                        .successors(s, j)
                        .iter()
                        .map(|&(n, p)| (game.states()[n].clone(), p))
                        .collect(),
                });
                rewards.push(RewardRecord {
                    state: game.states()[s].clone(),
                    action: names(j),
                    values: (0..game.n_agents()).map(|i| game.reward(s, j, i)).collect(),
                });
            }
        }
        GameFile {
            agents: game.agents().to_vec(),
            states: game.states().to_vec(),
            actions: (0..game.n_agents()).map(|i| game.actions(i).to_vec()).collect(),
            transitions,
            rewards,
            gamma: game.gamma(),
            initial_states: game.initial_states().iter().map(|&s| game.states()[s].clone()).collect(),
        }
    }

    fn joint(&self, action: &[String], path: &str) -> Result<usize> {
        if action.len() != self.agents.len() {
            return Err(Error::spec(
                path,
                format!("expected {} actions, found {}", self.agents.len(), action.len()),
            ));
        }
        let mut joint = 0;
        for (i, name) in action.iter().enumerate() {
            let a = lookup(&self.actions[i], name, || format!("{path}[{i}]"), "action")?;
            joint = joint * self.actions[i].len() + a;
        }
        Ok(joint)
    }

    pub fn build(&self) -> Result<StochasticGame> {
        if self.actions.len() != self.agents.len() {
            return Err(Error::spec("actions", "one action list per agent is required"));
        }
        let n_joint: usize = self.actions.iter().map(Vec::len).product();
        let n = self.states.len();
        let mut transitions: Vec<Vec<Option<Vec<(usize, f64)>>>> = vec![vec![None; n_joint]; n];
        for (r, rec) in self.transitions.iter().enumerate() {
            let s = lookup(&self.states, &rec.state, || format!("transitions[{r}].state"), "state")?;
            let j = self.joint(&rec.action, &format!("transitions[{r}].action"))?;
            let mut row = Vec::with_capacity(rec.next.len());
            for (name, &p) in &rec.next {
                let t = lookup(&self.states, name, || format!("transitions[{r}].next.{name}"), "state")?;
                row.push((t, p));
            }
            if transitions[s][j].replace(row).is_some() {
                return Err(Error::spec(format!("transitions[{r}]"), "duplicate record"));
            }
        }
        let mut rewards: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; n_joint]; n];
        for (r, rec) in self.rewards.iter().enumerate() {
            let s = lookup(&self.states, &rec.state, || format!("rewards[{r}].state"), "state")?;
            let j = self.joint(&rec.action, &format!("rewards[{r}].action"))?;
            if rec.values.len() != self.agents.len() {
                return Err(Error::spec(format!("rewards[{r}].values"), "one value per agent is required"));
            }
            if rewards[s][j].replace(rec.values.clone()).is_some() {
                return Err(Error::spec(format!("rewards[{r}]"), "duplicate record"));
            }
        }
        let label = |s: usize, j: usize| {
            let mut rest = j;
            let mut parts = vec![String::new(); self.agents.len()];
            for i in (0..self.agents.len()).rev() {
                let len = self.actions[i].len();
                parts[i] = self.actions[i][rest % len].clone();
                rest /= len;
            }
            format!("state {}, action [{}]", self.states[s], parts.join(", "))
        };
        let mut t_rows = Vec::with_capacity(n);
        let mut r_rows = Vec::with_capacity(n);
        for s in 0..n {
            let mut t = Vec::with_capacity(n_joint);
            let mut r = Vec::with_capacity(n_joint);
            for j in 0..n_joint {
                t.push(transitions[s][j].take().ok_or_else(|| {
                    Error::spec("transitions", format!("missing record for {}", label(s, j)))
                })?);
                r.push(rewards[s][j].take().ok_or_else(|| {
                    Error::spec("rewards", format!("missing record for {}", label(s, j)))
                })?);
            }
            t_rows.push(t);
            r_rows.push(r);
        }
        let initial_states = self
            .initial_states
            .iter()
            .enumerate()
            .map(|(k, name)| lookup(&self.states, name, || format!("initial_states[{k}]"), "state"))
            .collect::<Result<Vec<_>>>()?;
        StochasticGame::new(GameParts {
            agents: self.agents.clone(),
            states: self.states.clone(),
            actions: self.actions.clone(),
            transitions: t_rows,
            rewards: r_rows,
            gamma: self.gamma,
            initial_states,
        })
    }
}

pub fn parse_game(text: &str) -> Result<StochasticGame> {
    from_json::<GameFile>(text)?.build()
}

pub fn load_game(path: &Path) -> Result<StochasticGame> {
    parse_game(&read(path)?)
}

/// An agent given by index or by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentRef {
    Index(usize),
    Name(String),
}

impl AgentRef {
    pub fn resolve(&self, game: &StochasticGame, path: &str) -> Result<usize> {
        match self {
            AgentRef::Index(i) if *i < game.n_agents() => Ok(*i),
            AgentRef::Index(i) => Err(Error::spec(path, format!("agent index {i} out of range"))),
            AgentRef::Name(name) => lookup(game.agents(), name, || path.to_string(), "agent"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    pub action: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub history: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    pub probs: BTreeMap<String, f64>,
}

/// On-disk form of one agent's strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyFile {
    pub agent: AgentRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableRow>>,
}

fn state_of(game: &StochasticGame, name: &Option<String>, path: impl Fn() -> String) -> Result<usize> {
    match name {
        Some(name) => lookup(game.states(), name, path, "state"),
        None if game.n_states() == 1 => Ok(0),
        None => Err(Error::spec(path(), "state is required in games with several states")),
    }
}

impl StrategyFile {
    /// Serialises a strategy as an explicit table over `space`.
    pub fn from_strategy(game: &StochasticGame, strategy: &KMemoryStrategy, space: &AugSpace) -> Result<Self> {
        let agent = strategy.agent();
        let single = game.n_states() == 1;
        let state_name = |s: usize| (!single).then(|| game.states()[s].clone());
        let mut table = Vec::with_capacity(space.len());
        for aug in space.states() {
            let probs = strategy.probs_at(aug)?;
            table.push(TableRow {
                history: aug
                    .history
                    .iter()
                    .map(|step| StepRecord {
                        state: state_name(step.state),
                        action: (0..game.n_agents())
                            .map(|i| game.actions(i)[game.action_of(step.joint, i)].clone())
                            .collect(),
                    })
                    .collect(),
                state: state_name(aug.state),
                probs: probs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(a, &p)| (game.actions(agent)[a].clone(), p))
                    .collect(),
            });
        }
        Ok(StrategyFile {
            agent: AgentRef::Name(game.agents()[agent].clone()),
            builtin: None,
            memory: Some(space.memory()),
            table: Some(table),
        })
    }

    /// Resolves the file against `game`; `path` prefixes error key paths.
    pub fn build(&self, game: &StochasticGame, path: &str) -> Result<KMemoryStrategy> {
        let agent = self.agent.resolve(game, &format!("{path}agent"))?;
        match (&self.builtin, &self.table) {
            (Some(name), None) => builtin_strategy(game, agent, name)
                .map_err(|e| Error::spec(format!("{path}builtin"), e.to_string())),
            (None, Some(rows)) => {
                let memory = self
                    .memory
                    .ok_or_else(|| Error::spec(format!("{path}memory"), "tables need a memory"))?;
                let n_actions = game.n_actions(agent);
                let mut out = Vec::with_capacity(rows.len());
                for (r, row) in rows.iter().enumerate() {
                    let at = |rest: &str| format!("{path}table[{r}]{rest}");
                    if row.history.len() > memory {
                        return Err(Error::spec(at(".history"), format!("longer than memory {memory}")));
                    }
                    let mut history = Vec::with_capacity(row.history.len());
                    for (h, step) in row.history.iter().enumerate() {
                        let s = state_of(game, &step.state, || at(&format!(".history[{h}].state")))?;
                        if step.action.len() != game.n_agents() {
                            return Err(Error::spec(at(&format!(".history[{h}].action")), "one action per agent"));
                        }
                        let mut actions = Vec::with_capacity(game.n_agents());
                        for (i, name) in step.action.iter().enumerate() {
                            actions.push(lookup(
                                game.actions(i),
                                name,
                                || at(&format!(".history[{h}].action[{i}]")),
                                "action",
                            )?);
                        }
                        history.push(Step::new(s, game.joint_index(&actions)));
                    }
                    let state = state_of(game, &row.state, || at(".state"))?;
                    let mut probs = vec![0.0; n_actions];
                    for (name, &p) in &row.probs {
                        let a = lookup(game.actions(agent), name, || at(&format!(".probs.{name}")), "action")?;
                        probs[a] = p;
                    }
                    out.push((AugmentedState::new(history, state), probs));
                }
                KMemoryStrategy::from_table(agent, memory, n_actions, out).map_err(|e| match e {
                    Error::Spec { path: p, message } => Error::spec(format!("{path}{p}"), message),
                    other => other,
                })
            }
            _ => Err(Error::spec(
                path.trim_end_matches('.'),
                "give exactly one of `builtin` and `table`",
            )),
        }
    }
}

fn is_pd_like(game: &StochasticGame) -> bool {
    game.n_agents() == 2 && game.n_actions(0) == 2 && game.n_actions(1) == 2
}

fn numbers(args: &str, count: usize) -> Result<Vec<u64>> {
    let parts: Vec<&str> = args.split(',').collect();
    if parts.len() != count {
        return Err(Error::mismatch(format!("expected {count} comma-separated numbers")));
    }
    parts
        .iter()
        .map(|p| p.trim().parse::<u64>().map_err(|_| Error::mismatch(format!("`{p}` is not a number"))))
        .collect()
}

/// Names accepted for builtin strategies.
pub const BUILTINS: &[&str] = &[
    "all-c",
    "all-d",
    "tft",
    "ntfmt:N,M",
    "xdc:X",
    "ntfmt-spirit:N,M",
    "uniform",
    "const:ACTION",
    "random:K,SEED",
];

/// Resolves a builtin strategy name for `agent` in `game`.
///
/// `all-c`, `all-d`, `tft`, `ntfmt:N,M` and `xdc:X` need a two-agent game
/// with two actions each, read as cooperate (first) and defect (second).
/// `ntfmt-spirit:N,M` needs equal action counts, ordered from lowest to
/// highest bid. `uniform`, `const:ACTION` and `random:K,SEED` (a seeded
/// random K-memory table) work in any game.
pub fn builtin_strategy(game: &StochasticGame, agent: usize, name: &str) -> Result<KMemoryStrategy> {
    let (head, args) = name.split_once(':').unwrap_or((name, ""));
    let pd = || {
        if is_pd_like(game) {
            Ok(())
        } else {
            Err(Error::mismatch(format!("`{head}` needs a two-agent game with two actions each")))
        }
    };
    match head {
        "all-c" => pd().map(|_| all_cooperate(agent)),
        "all-d" => pd().map(|_| all_defect(agent)),
        "tft" => pd().map(|_| tit_for_tat(agent)),
        "ntfmt" => {
            pd()?;
            let v = numbers(args, 2)?;
            if v[0] == 0 || v[1] == 0 {
                return Err(Error::mismatch("N and M must be positive"));
            }
            Ok(n_tits_for_m_tats(agent, v[0] as usize, v[1] as usize))
        }
        "xdc" => {
            pd()?;
            Ok(x_d_before_one_c(agent, numbers(args, 1)?[0] as usize))
        }
        "ntfmt-spirit" => {
            if game.n_agents() != 2 || game.n_actions(0) != game.n_actions(1) {
                return Err(Error::mismatch("`ntfmt-spirit` needs two agents with equal action sets"));
            }
            let v = numbers(args, 2)?;
            if v[0] == 0 || v[1] == 0 {
                return Err(Error::mismatch("N and M must be positive"));
            }
            Ok(ntfmt_in_spirit(agent, v[0] as usize, v[1] as usize, game.n_actions(0)))
        }
        "uniform" => Ok(KMemoryStrategy::uniform(agent, game.n_actions(agent))),
        "const" => {
            let a = lookup(game.actions(agent), args, || "builtin".into(), "action")?;
            Ok(KMemoryStrategy::constant(agent, game.n_actions(agent), a))
        }
        "random" => {
            let v = numbers(args, 2)?;
            random_strategy(game, agent, v[0] as usize, v[1], false)
        }
        _ => Err(Error::mismatch(format!(
            "unknown builtin `{name}`; expected one of {}",
            BUILTINS.join(", ")
        ))),
    }
}

/// A seeded random table on the K-memory space of `game`; deterministic
/// rows when `pure` is set.
pub fn random_strategy(game: &StochasticGame, agent: usize, k: usize, seed: u64, pure: bool) -> Result<KMemoryStrategy> {
    let space = game_space(game, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = game.n_actions(agent);
    let rows: Vec<_> = space
        .states()
        .iter()
        .map(|aug| {
            let probs = if pure {
                let mut p = vec![0.0; n];
                p[rng.gen_range(0..n)] = 1.0;
                p
            } else {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|x| x / total).collect()
            };
            (aug.clone(), probs)
        })
        .collect();
    KMemoryStrategy::from_table(agent, k, n, rows)
}

pub fn parse_strategy(game: &StochasticGame, text: &str) -> Result<KMemoryStrategy> {
    from_json::<StrategyFile>(text)?.build(game, "")
}

pub fn load_strategy(game: &StochasticGame, path: &Path) -> Result<KMemoryStrategy> {
    parse_strategy(game, &read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<StrategyFile>>,
}

/// On-disk form of a [`MixedStrategy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub support: Vec<SupportEntry>,
    pub weights: Vec<f64>,
}

impl MixtureFile {
    pub fn build(&self, game: &StochasticGame) -> Result<MixedStrategy> {
        let mut support = Vec::with_capacity(self.support.len());
        for (k, entry) in self.support.iter().enumerate() {
            let strategy = match (&entry.strategy, &entry.strategies) {
                (Some(s), None) => s.build(game, &format!("support[{k}].strategy."))?,
                (None, Some(list)) => {
                    let parts = list
                        .iter()
                        .enumerate()
                        .map(|(j, s)| s.build(game, &format!("support[{k}].strategies[{j}].")))
                        .collect::<Result<Vec<_>>>()?;
                    let covered: Vec<usize> = parts.iter().flat_map(|s| s.agents().to_vec()).collect();
                    let me = (0..game.n_agents()).find(|i| !covered.contains(i)).unwrap_or(0);
                    joint_opponent(game, me, &parts).map_err(|e| Error::spec(format!("support[{k}].strategies"), e.to_string()))?
                }
                _ => {
                    return Err(Error::spec(
                        format!("support[{k}]"),
                        "give exactly one of `strategy` and `strategies`",
                    ))
                }
            };
            support.push(strategy);
        }
        MixedStrategy::new(support, self.weights.clone())
    }

    /// Serialises a mixture over single-agent strategies as explicit tables.
    pub fn from_mixture(game: &StochasticGame, mixed: &MixedStrategy, names: &[String]) -> Result<Self> {
        let space = game_space(game, mixed.memory())?;
        let support = mixed
            .support()
            .iter()
            .enumerate()
            .map(|(k, s)| {
                Ok(SupportEntry {
                    name: names.get(k).cloned(),
                    strategy: Some(StrategyFile::from_strategy(game, s, &space)?),
                    strategies: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureFile {
            support,
            weights: mixed.weights().to_vec(),
        })
    }
}

pub fn parse_mixture(game: &StochasticGame, text: &str) -> Result<MixedStrategy> {
    from_json::<MixtureFile>(text)?.build(game)
}

pub fn load_mixture(game: &StochasticGame, path: &Path) -> Result<MixedStrategy> {
    parse_mixture(game, &read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpTransition {
    pub state: String,
    pub action: String,
    pub next: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpReward {
    pub state: String,
    pub action: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRecord {
    pub name: String,
    pub transitions: Vec<CmdpTransition>,
    pub rewards: Vec<CmdpReward>,
}

/// On-disk form of a [`Cmdp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpFile {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub contexts: Vec<ContextRecord>,
    pub context_prior: Vec<f64>,
    pub gamma: f64,
    pub initial_states: Vec<String>,
}

impl CmdpFile {
    pub fn build(&self) -> Result<Cmdp> {
        let n = self.states.len();
        let m = self.actions.len();
        let mut transitions = Vec::with_capacity(self.contexts.len());
        let mut rewards = Vec::with_capacity(self.contexts.len());
        for (c, ctx) in self.contexts.iter().enumerate() {
            let mut t: Vec<Vec<Option<Vec<(usize, f64)>>>> = vec![vec![None; m]; n];
            for (r, rec) in ctx.transitions.iter().enumerate() {
                let at = |rest: &str| format!("contexts[{c}].transitions[{r}]{rest}");
                let s = lookup(&self.states, &rec.state, || at(".state"), "state")?;
                let a = lookup(&self.actions, &rec.action, || at(".action"), "action")?;
                let mut row = Vec::with_capacity(rec.next.len());
                for (name, &p) in &rec.next {
                    row.push((lookup(&self.states, name, || at(&format!(".next.{name}")), "state")?, p));
                }
                if t[s][a].replace(row).is_some() {
                    return Err(Error::spec(at(""), "duplicate record"));
                }
            }
            let mut rw: Vec<Vec<Option<f64>>> = vec![vec![None; m]; n];
            for (r, rec) in ctx.rewards.iter().enumerate() {
                let at = |rest: &str| format!("contexts[{c}].rewards[{r}]{rest}");
                let s = lookup(&self.states, &rec.state, || at(".state"), "state")?;
                let a = lookup(&self.actions, &rec.action, || at(".action"), "action")?;
                if rw[s][a].replace(rec.value).is_some() {
                    return Err(Error::spec(at(""), "duplicate record"));
                }
            }
            let mut t_rows = Vec::with_capacity(n);
            let mut r_rows = Vec::with_capacity(n);
            for s in 0..n {
                let mut tr = Vec::with_capacity(m);
                let mut rr = Vec::with_capacity(m);
                for a in 0..m {
                    let what = format!("state {}, action {}", self.states[s], self.actions[a]);
                    tr.push(t[s][a].take().ok_or_else(|| {
                        Error::spec(format!("contexts[{c}].transitions"), format!("missing record for {what}"))
                    })?);
                    rr.push(rw[s][a].ok_or_else(|| {
                        Error::spec(format!("contexts[{c}].rewards"), format!("missing record for {what}"))
                    })?);
                }
                t_rows.push(tr);
                r_rows.push(rr);
            }
            transitions.push(t_rows);
            rewards.push(r_rows);
        }
        let initial_states = self
            .initial_states
            .iter()
            .enumerate()
            .map(|(k, name)| lookup(&self.states, name, || format!("initial_states[{k}]"), "state"))
            .collect::<Result<Vec<_>>>()?;
        Cmdp::new(CmdpParts {
            contexts: self.contexts.iter().map(|c| c.name.clone()).collect(),
            states: self.states.clone(),
            actions: self.actions.clone(),
            transitions,
            rewards,
            gamma: self.gamma,
            context_prior: self.context_prior.clone(),
            initial_states,
        })
    }

    pub fn from_cmdp(cmdp: &Cmdp) -> Self {
        let states = cmdp.states();
        let actions = cmdp.actions();
        let contexts = cmdp
            .contexts()
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let mdp = cmdp.context_mdp(c);
                let mut transitions = Vec::new();
                let mut rewards = Vec::new();
                for s in 0..states.len() {
                    for a in 0..actions.len() {
                        transitions.push(CmdpTransition {
                            state: states[s].clone(),
                            action: actions[a].clone(),
                            next: mdp
                                .transition(s, a)
                                .iter()
                                .map(|&(t, p)| (states[t].clone(), p))
                                .collect(),
                        });
                        rewards.push(CmdpReward {
                            state: states[s].clone(),
                            action: actions[a].clone(),
                            value: mdp.reward(s, a),
                        });
                    }
                }
                ContextRecord {
                    name: name.clone(),
                    transitions,
                    rewards,
                }
            })
            .collect();
        CmdpFile {
            states: states.to_vec(),
            actions: actions.to_vec(),
            contexts,
            context_prior: cmdp.prior().to_vec(),
            gamma: cmdp.gamma(),
            initial_states: cmdp.initial_states().iter().map(|&s| states[s].clone()).collect(),
        }
    }
}

pub fn parse_cmdp(text: &str) -> Result<Cmdp> {
    from_json::<CmdpFile>(text)?.build()
}

pub fn load_cmdp(path: &Path) -> Result<Cmdp> {
    parse_cmdp(&read(path)?)
}

/// Game and mixture stored together, as used for committed fixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedInstanceFile {
    pub game: GameFile,
    pub agent: AgentRef,
    pub mixture: MixtureFile,
    /// An own strategy of interest, e.g. one whose two utilities differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyFile>,
    /// Free-form provenance, e.g. the seed that produced the instance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl MixedInstanceFile {
    pub fn build(&self) -> Result<MixedInstance> {
        let game = self.game.build().map_err(|e| prefix("game.", e))?;
        let agent = self.agent.resolve(&game, "agent")?;
        let mixture = self.mixture.build(&game).map_err(|e| prefix("mixture.", e))?;
        let strategy = match &self.strategy {
            Some(s) => Some(s.build(&game, "strategy.")?),
            None => None,
        };
        Ok(MixedInstance {
            game,
            agent,
            mixture,
            strategy,
            notes: self.notes.clone(),
        })
    }
}

/// A loaded [`MixedInstanceFile`].
#[derive(Clone, Debug)]
pub struct MixedInstance {
    pub game: StochasticGame,
    pub agent: usize,
    pub mixture: MixedStrategy,
    pub strategy: Option<KMemoryStrategy>,
    pub notes: BTreeMap<String, String>,
}

fn prefix(p: &str, e: Error) -> Error {
    match e {
        Error::Spec { path, message } => Error::spec(format!("{p}{path}"), message),
        other => other,
    }
}

pub fn load_mixed_instance(path: &Path) -> Result<MixedInstance> {
    from_json::<MixedInstanceFile>(&read(path)?)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::ipd::{make_ipd, PdPayoffs};

    fn ipd() -> StochasticGame {
        make_ipd(PdPayoffs::default(), 0.9).unwrap()
    }

    fn spec_path(e: Error) -> String {
        match e {
            Error::Spec { path, .. } => path,
            other => panic!("expected a spec error, got {other}"),
        }
    }

    #[test]
    fn game_round_trips_through_json() {
        let game = ipd();
        let text = serde_json::to_string(&GameFile::from_game(&game)).unwrap();
        let back = parse_game(&text).unwrap();
        assert_eq!(GameFile::from_game(&back), GameFile::from_game(&game));
    }

    #[test]
    fn unknown_successor_reports_its_path() {
        let mut file = GameFile::from_game(&ipd());
        file.transitions[2].next = BTreeMap::from([("nowhere".to_string(), 1.0)]);
        let text = serde_json::to_string(&file).unwrap();
        assert_eq!(spec_path(parse_game(&text).unwrap_err()), "transitions[2].next.nowhere");
    }

    #[test]
    fn type_errors_report_their_path() {
        let text = r#"{"agents": ["a"], "states": ["s"], "actions": [["x"]],
            "transitions": [{"state": "s", "action": ["x"], "next": {"s": "one"}}],
            "rewards": [], "gamma": 0.5, "initial_states": ["s"]}"#;
        assert_eq!(spec_path(parse_game(text).unwrap_err()), "transitions[0].next.s");
    }

    #[test]
    fn missing_records_are_errors() {
        let mut file = GameFile::from_game(&ipd());
        file.transitions.pop();
        let text = serde_json::to_string(&file).unwrap();
        assert_eq!(spec_path(parse_game(&text).unwrap_err()), "transitions");
    }

    #[test]
    fn strategy_tables_round_trip_exactly() {
        let game = ipd();
        let s = random_strategy(&game, 1, 2, 9, false).unwrap();
        let space = game_space(&game, 2).unwrap();
        let text = serde_json::to_string(&StrategyFile::from_strategy(&game, &s, &space).unwrap()).unwrap();
        let back = parse_strategy(&game, &text).unwrap();
        assert_eq!(s.materialize(&space).unwrap(), back.materialize(&space).unwrap());
    }

    #[test]
    fn builtins_resolve() {
        let game = ipd();
        let space = game_space(&game, 2).unwrap();
        let s = parse_strategy(&game, r#"{"agent": 1, "builtin": "ntfmt:2,2"}"#).unwrap();
        assert!(s.same_behaviour(&n_tits_for_m_tats(1, 2, 2), &space).unwrap());
        let err = parse_strategy(&game, r#"{"agent": 1, "builtin": "grim"}"#).unwrap_err();
        assert_eq!(spec_path(err), "builtin");
    }

    #[test]
    fn mixture_of_builtins() {
        let game = ipd();
        let text = r#"{"support": [{"strategy": {"agent": 1, "builtin": "tft"}},
                                  {"strategy": {"agent": 1, "builtin": "all-d"}}],
                       "weights": [0.25, 0.75]}"#;
        let m = parse_mixture(&game, text).unwrap();
        assert_eq!(m.len(), 2);
        let bad = text.replace("0.75", "0.5");
        assert_eq!(spec_path(parse_mixture(&game, &bad).unwrap_err()), "weights");
    }
}
