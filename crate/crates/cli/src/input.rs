use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use kmem::domains::ipd::{make_ipd, PdPayoffs};
use kmem::domains::td::{make_td, BidOp, TdSpec, TdVariant};
use kmem::game::StochasticGame;
use kmem::spec::{builtin_strategy, load_game, load_strategy};
use kmem::strategy::{joint_opponent, KMemoryStrategy};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OpArg {
    Floor,
    Ceiling,
    Min,
    Max,
}

impl From<OpArg> for BidOp {
    fn from(op: OpArg) -> Self {
        match op {
            OpArg::Floor => BidOp::Floor,
            OpArg::Ceiling => BidOp::Ceiling,
            OpArg::Min => BidOp::Min,
            OpArg::Max => BidOp::Max,
        }
    }
}

/// Which game to solve, and the knobs of the built-in domains.
#[derive(Args, Clone, Debug)]
pub struct GameArgs {
    /// `ipd`, `td`, `itd`, `itd-markov`, or a path to a game JSON file
    /// [default: `itd` for qlearn, `ipd` otherwise].
    #[arg(long)]
    pub game: Option<String>,
    /// Discount factor; defaults to 0.9 for built-in domains and to the
    /// file's value for game files.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Prisoner's dilemma payoffs as `T,R,P,S`.
    #[arg(long, default_value = "2,1,0,-1")]
    pub payoffs: String,
    /// Traveler's dilemma bid range as `LO,HI` (default 2,10 for `td`, 0,10 otherwise).
    #[arg(long)]
    pub bids: Option<String>,
    /// Traveler's dilemma bonus.
    #[arg(long, default_value_t = 2.0)]
    pub bonus: f64,
    #[arg(long, default_value_t = 2)]
    pub players: usize,
    /// Interval-move probability of `itd-markov`.
    #[arg(long, default_value_t = 0.5)]
    pub markov_p: f64,
    #[arg(long, value_enum, default_value = "min")]
    pub op1: OpArg,
    #[arg(long, value_enum, default_value = "max")]
    pub op2: OpArg,
}

fn numbers<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| anyhow::anyhow!("`{p}` in {what} is not a number")))
        .collect()
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    numbers(text, what)
}

pub fn payoffs(text: &str) -> Result<PdPayoffs> {
    let v: Vec<f64> = numbers(text, "--payoffs")?;
    let [t, r, p, s] = v[..] else {
        bail!("--payoffs needs four values T,R,P,S");
    };
    let payoffs = PdPayoffs { t, r, p, s };
    payoffs.validate()?;
    Ok(payoffs)
}

impl GameArgs {
    fn td_spec(&self, name: &str) -> Result<TdSpec> {
        let default = if name == "td" { "2,10" } else { "0,10" };
        let b: Vec<i64> = numbers(self.bids.as_deref().unwrap_or(default), "--bids")?;
        let [lo, hi] = b[..] else {
            bail!("--bids needs two values LO,HI");
        };
        let mut spec = TdSpec::one_shot(self.players, self.bonus, lo, hi);
        if name == "itd-markov" {
            spec.variant = TdVariant::MarkovChain {
                p: self.markov_p,
                op1: self.op1.into(),
                op2: self.op2.into(),
            };
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<StochasticGame> {
        self.build_or("ipd")
    }

    pub fn build_or(&self, default: &str) -> Result<StochasticGame> {
        let gamma = self.gamma.unwrap_or(0.9);
        let name = self.game.as_deref().unwrap_or(default);
        match name {
            "ipd" => Ok(make_ipd(payoffs(&self.payoffs)?, gamma)?),
            "td" | "itd" | "itd-markov" => Ok(make_td(&self.td_spec(name)?, gamma)?),
            path => {
                let game = load_game(Path::new(path)).with_context(|| format!("reading game {path}"))?;
                match self.gamma {
                    Some(g) => Ok(game.with_gamma(g)?),
                    None => Ok(game),
                }
            }
        }
    }
}

/// A strategy for `agent` given by builtin name or file path.
pub fn strategy(game: &StochasticGame, agent: usize, name: &str) -> Result<KMemoryStrategy> {
    if Path::new(name).is_file() {
        let s = load_strategy(game, Path::new(name)).with_context(|| format!("reading strategy {name}"))?;
        if s.agents() != [agent] && s.agents() != game.others(agent).as_slice() {
            bail!("strategy file {name} is for agent(s) {:?}", s.agents());
        }
        return Ok(s);
    }
    Ok(builtin_strategy(game, agent, name)?)
}

/// The joint strategy of everyone except `agent`. A file may hold either
/// a joint strategy or one for a single agent; a builtin name is applied
/// to every opponent.
pub fn opponents(game: &StochasticGame, agent: usize, name: &str) -> Result<KMemoryStrategy> {
    if agent >= game.n_agents() {
        bail!("agent {agent} does not exist; the game has {} agents", game.n_agents());
    }
    let others = game.others(agent);
    if Path::new(name).is_file() {
        let s = strategy(game, others[0], name)?;
        if s.agents() == others.as_slice() {
            return Ok(s);
        }
        bail!("strategy file {name} covers agent(s) {:?}, expected {:?}", s.agents(), others);
    }
    let parts = others
        .iter()
        .map(|&j| Ok(builtin_strategy(game, j, name)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(joint_opponent(game, agent, &parts)?)
}
