//! The (generalized) traveler's dilemma and its iterated variants.
//!
//! Each agent bids an integer from an interval. Agent `i` receives
//! `min(aᵢ, m₋ᵢ) + k·sign(m₋ᵢ − aᵢ)` where `m₋ᵢ` is the lowest bid among
//! the others. With two agents and `k = 2` this is
//! `min(aᵢ, a₋ᵢ) + 2·sign(a₋ᵢ − aᵢ)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameParts, StochasticGame};

/// Largest profile count [`td_potential_check`] will enumerate.
pub const FIP_PROFILE_CAP: usize = 1_000_000;

/// Aggregates a bidding profile into an interval endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BidOp {
    /// The lowest bid of the full interval.
    Floor,
    /// The highest bid of the full interval.
    Ceiling,
    Min,
    Max,
}

impl BidOp {
    fn apply(self, bids: &[i64], full: (i64, i64)) -> i64 {
        match self {
            BidOp::Floor => full.0,
            BidOp::Ceiling => full.1,
            BidOp::Min => *bids.iter().min().expect("non-empty profile"),
            BidOp::Max => *bids.iter().max().expect("non-empty profile"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TdVariant {
    OneShot,
    /// The one-shot game repeated for `rounds` rounds; the round count is
    /// applied by the evaluator, the game itself is a single state.
    FixedRounds { rounds: usize },
    /// A chain of dilemmas over sub-intervals. After a profile the interval
    /// becomes `[op1..op2]` with probability `p`; the episode ends once all
    /// bids are equal, which is the only profile that pays.
    MarkovChain { p: f64, op1: BidOp, op2: BidOp },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdSpec {
    pub n_agents: usize,
    pub k_bonus: f64,
    pub bids: (i64, i64),
    pub variant: TdVariant,
}

impl TdSpec {
    pub fn one_shot(n_agents: usize, k_bonus: f64, lo: i64, hi: i64) -> Self {
        TdSpec {
            n_agents,
            k_bonus,
            bids: (lo, hi),
            variant: TdVariant::OneShot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::spec("n_agents", "at least two agents are required"));
        }
        if !(self.k_bonus > 1.0) || !self.k_bonus.is_finite() {
            return Err(Error::spec("k_bonus", "the bonus must exceed 1"));
        }
        if self.bids.0 > self.bids.1 {
            return Err(Error::spec("bids", "empty bid interval"));
        }
        if let TdVariant::MarkovChain { p, .. } = self.variant {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::spec("variant.p", "probability outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn n_bids(&self) -> usize {
        (self.bids.1 - self.bids.0 + 1) as usize
    }

    pub fn bid_values(&self) -> Vec<i64> {
        (self.bids.0..=self.bids.1).collect()
    }
}

/// Payoff of agent `i` for a bidding profile.
pub fn td_payoff(bids: &[i64], i: usize, k_bonus: f64) -> f64 {
    let others = bids
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &b)| b)
        .min()
        .expect("at least two agents");
    let own = bids[i];
    own.min(others) as f64 + k_bonus * (others - own).signum() as f64
}

fn bid_labels(spec: &TdSpec) -> Vec<String> {
    spec.bid_values().iter().map(|b| b.to_string()).collect()
}

fn decode(mut joint: usize, n_agents: usize, n_bids: usize, lo: i64) -> Vec<i64> {
    let mut out = vec![0; n_agents];
    for slot in out.iter_mut().rev() {
        *slot = lo + (joint % n_bids) as i64;
        joint /= n_bids;
    }
    out
}

/// Builds the stochastic game of a traveler's dilemma. One-shot and
/// fixed-rounds variants have a single state.
///
/// The Markov-chain variant has one state per sub-interval `[l..u]` of the
/// bid range plus an absorbing `end` state. The action set is the full bid
/// range in every state; bids outside the current interval are clipped to
/// it before payoffs and transitions are computed.
pub fn make_td(spec: &TdSpec, gamma: f64) -> Result<StochasticGame> {
    spec.validate()?;
    let n = spec.n_agents;
    let n_bids = spec.n_bids();
    let n_joint = n_bids
        .checked_pow(n as u32)
        .filter(|&j| j <= FIP_PROFILE_CAP)
        .ok_or(Error::SizeCap {
            what: "traveler's dilemma joint action set",
            cap: FIP_PROFILE_CAP,
        })?;
    let agents: Vec<String> = (1..=n).map(|i| format!("p{i}")).collect();
    let actions = vec![bid_labels(spec); n];
    let lo = spec.bids.0;

    match spec.variant {
        TdVariant::OneShot | TdVariant::FixedRounds { .. } => {
            let rewards = (0..n_joint)
                .map(|j| {
                    let bids = decode(j, n, n_bids, lo);
                    (0..n).map(|i| td_payoff(&bids, i, spec.k_bonus)).collect()
                })
                .collect();
            StochasticGame::new(GameParts {
                agents,
                states: vec!["td".into()],
                actions,
                transitions: vec![vec![vec![(0, 1.0)]; n_joint]],
                rewards: vec![rewards],
                gamma,
                initial_states: vec![0],
            })
        }
        TdVariant::MarkovChain { p, op1, op2 } => {
            let full = spec.bids;
            let mut intervals: BTreeMap<(i64, i64), usize> = BTreeMap::new();
            for l in full.0..=full.1 {
                for u in l..=full.1 {
                    let idx = intervals.len();
                    intervals.insert((l, u), idx);
                }
            }
            let end = intervals.len();
            let mut states: Vec<String> = intervals.keys().map(|(l, u)| format!("[{l}..{u}]")).collect();
            states.push("end".into());
            let mut transitions = Vec::with_capacity(states.len());
            let mut rewards = Vec::with_capacity(states.len());
            for (&(l, u), &s) in &intervals {
                let mut t_rows = Vec::with_capacity(n_joint);
                let mut r_rows = Vec::with_capacity(n_joint);
                for j in 0..n_joint {
                    let bids: Vec<i64> = decode(j, n, n_bids, lo)
                        .into_iter()
                        .map(|b| b.clamp(l, u))
                        .collect();
                    if bids.iter().all(|&b| b == bids[0]) {
                        t_rows.push(vec![(end, 1.0)]);
                        r_rows.push((0..n).map(|i| td_payoff(&bids, i, spec.k_bonus)).collect());
                        continue;
                    }
                    let a = op1.apply(&bids, full).clamp(full.0, full.1);
                    let b = op2.apply(&bids, full).clamp(full.0, full.1);
                    let next = intervals[&(a.min(b), a.max(b))];
                    t_rows.push(vec![(next, p), (s, 1.0 - p)]);
                    r_rows.push(vec![0.0; n]);
                }
                transitions.push(t_rows);
                rewards.push(r_rows);
            }
            transitions.push(vec![vec![(end, 1.0)]; n_joint]);
            rewards.push(vec![vec![0.0; n]; n_joint]);
            let start = intervals[&full];
            StochasticGame::new(GameParts {
                agents,
                states,
                actions,
                transitions,
                rewards,
                gamma,
                initial_states: vec![start],
            })
        }
    }
}

/// Result of the finite-improvement-property check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FipReport {
    pub has_fip: bool,
    /// Length (in deviations) of the longest improvement path; only
    /// meaningful when `has_fip` holds.
    pub longest_improvement_path: usize,
    /// Profiles without a profitable unilateral deviation.
    pub sinks: Vec<Vec<i64>>,
}

/// Builds the strict better-response graph over all bidding profiles of a
/// one-shot dilemma and checks it for cycles.
pub fn td_potential_check(spec: &TdSpec) -> Result<FipReport> {
    spec.validate()?;
    let n = spec.n_agents;
    let n_bids = spec.n_bids();
    let n_profiles = n_bids
        .checked_pow(n as u32)
        .filter(|&c| c <= FIP_PROFILE_CAP)
        .ok_or(Error::SizeCap {
            what: "bidding profile set",
            cap: FIP_PROFILE_CAP,
        })?;
    let lo = spec.bids.0;
    let strides: Vec<usize> = (0..n).map(|i| n_bids.pow((n - 1 - i) as u32)).collect();

    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n_profiles];
    for (profile, out) in edges.iter_mut().enumerate() {
        let bids = decode(profile, n, n_bids, lo);
        for i in 0..n {
            let current = td_payoff(&bids, i, spec.k_bonus);
            let own = (bids[i] - lo) as usize;
            let mut alt = bids.clone();
            for b in 0..n_bids {
                if b == own {
                    continue;
                }
                alt[i] = lo + b as i64;
                if td_payoff(&alt, i, spec.k_bonus) > current {
                    out.push(profile - own * strides[i] + b * strides[i]);
                }
            }
        }
    }

    // Kahn's algorithm; the longest path falls out of the topological order.
    let mut indegree = vec![0usize; n_profiles];
    for targets in &edges {
        for &t in targets {
            indegree[t] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n_profiles).filter(|&v| indegree[v] == 0).collect();
    let mut longest = vec![0usize; n_profiles];
    let mut visited = 0;
    while let Some(v) = queue.pop() {
        visited += 1;
        for &t in &edges[v] {
            longest[t] = longest[t].max(longest[v] + 1);
            indegree[t] -= 1;
            if indegree[t] == 0 {
                queue.push(t);
            }
        }
    }
    let sinks = (0..n_profiles)
        .filter(|&v| edges[v].is_empty())
        .map(|v| decode(v, n, n_bids, lo))
        .collect();
    Ok(FipReport {
        has_fip: visited == n_profiles,
        longest_improvement_path: longest.into_iter().max().unwrap_or(0),
        sinks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::ipd::{make_ipd, PdPayoffs};

    #[test]
    fn two_player_payoffs() {
        assert_eq!(td_payoff(&[3, 7], 0, 2.0), 5.0);
        assert_eq!(td_payoff(&[3, 7], 1, 2.0), 1.0);
        assert_eq!(td_payoff(&[4, 4], 0, 2.0), 4.0);
    }

    #[test]
    fn many_player_payoff_uses_lowest_other_bid() {
        assert_eq!(td_payoff(&[5, 9, 7], 0, 3.0), 8.0);
        assert_eq!(td_payoff(&[5, 9, 7], 1, 3.0), 2.0);
    }

    #[test]
    fn binary_bids_give_a_prisoners_dilemma() {
        let game = make_td(&TdSpec::one_shot(2, 2.0, 0, 1), 0.9).unwrap();
        // Bid 1 plays the role of C, bid 0 of D.
        let pd = make_ipd(
            PdPayoffs {
                t: 2.0,
                r: 1.0,
                p: 0.0,
                s: -2.0,
            },
            0.9,
        )
        .unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let td = game.joint_index(&[1 - a, 1 - b]);
                let ipd = pd.joint_index(&[a, b]);
                for i in 0..2 {
                    assert_eq!(game.reward(0, td, i), pd.reward(0, ipd, i));
                }
            }
        }
    }

    #[test]
    fn fip_on_small_interval_has_min_bid_sink() {
        let report = td_potential_check(&TdSpec::one_shot(2, 2.0, 2, 4)).unwrap();
        assert!(report.has_fip);
        assert_eq!(report.sinks, vec![vec![2, 2]]);
    }

    #[test]
    fn single_bid_has_no_edges() {
        let report = td_potential_check(&TdSpec::one_shot(3, 2.0, 5, 5)).unwrap();
        assert!(report.has_fip);
        assert_eq!(report.longest_improvement_path, 0);
        assert_eq!(report.sinks, vec![vec![5, 5, 5]]);
    }

    #[test]
    fn three_player_fip() {
        let report = td_potential_check(&TdSpec::one_shot(3, 1.5, 0, 4)).unwrap();
        assert!(report.has_fip);
        assert_eq!(report.sinks, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn markov_chain_variant_is_well_formed() {
        let spec = TdSpec {
            n_agents: 2,
            k_bonus: 2.0,
            bids: (0, 3),
            variant: TdVariant::MarkovChain {
                p: 0.5,
                op1: BidOp::Floor,
                op2: BidOp::Max,
            },
        };
        let game = make_td(&spec, 0.9).unwrap();
        assert_eq!(game.n_states(), 10 + 1);
        let start = game.initial_states()[0];
        assert_eq!(game.states()[start], "[0..3]");
        let end = game.state_index("end").unwrap();
        let equal = game.joint_index(&[2, 2]);
        assert_eq!(game.successors(start, equal), &[(end, 1.0)]);
        assert_eq!(game.reward(start, equal, 0), 2.0);
        let unequal = game.joint_index(&[1, 2]);
        assert_eq!(game.reward(start, unequal, 0), 0.0);
        let shrunk = game.state_index("[0..2]").unwrap();
        assert_eq!(game.successors(start, unequal), &[(shrunk, 0.5), (start, 0.5)]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(TdSpec::one_shot(2, 1.0, 0, 3).validate().is_err());
        assert!(TdSpec::one_shot(2, 2.0, 3, 0).validate().is_err());
        assert!(TdSpec::one_shot(1, 2.0, 0, 3).validate().is_err());
    }
}
