//! The iterated prisoner's dilemma as a single-state, two-agent game.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameParts, StochasticGame};

pub const COOPERATE: usize = 0;
pub const DEFECT: usize = 1;

/// Stage payoffs: temptation, reward, punishment and sucker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdPayoffs {
    pub t: f64,
    pub r: f64,
    pub p: f64,
    pub s: f64,
}

impl Default for PdPayoffs {
    fn default() -> Self {
        PdPayoffs {
            t: 2.0,
            r: 1.0,
            p: 0.0,
            s: -1.0,
        }
    }
}

impl PdPayoffs {
    pub fn validate(&self) -> Result<()> {
        if self.t > self.r && self.r > self.p && self.p > self.s {
            Ok(())
        } else {
            Err(Error::spec(
                "payoffs",
                format!(
                    "expected T > R > P > S, got T={} R={} P={} S={}",
                    self.t, self.r, self.p, self.s
                ),
            ))
        }
    }

    /// Row player's stage payoff for `(own, other)` actions.
    pub fn payoff(&self, own: usize, other: usize) -> f64 {
        match (own, other) {
            (COOPERATE, COOPERATE) => self.r,
            (COOPERATE, _) => self.s,
            (_, COOPERATE) => self.t,
            _ => self.p,
        }
    }
}

/// Builds the IPD with actions `C`, `D` for agents `p1`, `p2`.
pub fn make_ipd(payoffs: PdPayoffs, gamma: f64) -> Result<StochasticGame> {
    payoffs.validate()?;
    let mut rewards = Vec::with_capacity(4);
    for a1 in [COOPERATE, DEFECT] {
        for a2 in [COOPERATE, DEFECT] {
            rewards.push(vec![payoffs.payoff(a1, a2), payoffs.payoff(a2, a1)]);
        }
    }
    StochasticGame::new(GameParts {
        agents: vec!["p1".into(), "p2".into()],
        states: vec!["s".into()],
        actions: vec![vec!["C".into(), "D".into()], vec!["C".into(), "D".into()]],
        transitions: vec![vec![vec![(0, 1.0)]; 4]],
        rewards: vec![rewards],
        gamma,
        initial_states: vec![0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_payoff_table() {
        let game = make_ipd(PdPayoffs::default(), 0.9).unwrap();
        let at = |a: usize, b: usize| {
            let j = game.joint_index(&[a, b]);
            (game.reward(0, j, 0), game.reward(0, j, 1))
        };
        assert_eq!(at(DEFECT, COOPERATE), (2.0, -1.0));
        assert_eq!(at(COOPERATE, COOPERATE), (1.0, 1.0));
        assert_eq!(at(DEFECT, DEFECT), (0.0, 0.0));
        assert_eq!(at(COOPERATE, DEFECT), (-1.0, 2.0));
    }

    #[test]
    fn payoffs_are_symmetric() {
        let game = make_ipd(PdPayoffs::default(), 0.9).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let ab = game.joint_index(&[a, b]);
                let ba = game.joint_index(&[b, a]);
                assert_eq!(game.reward(0, ab, 0), game.reward(0, ba, 1));
            }
        }
    }

    #[test]
    fn rejects_misordered_payoffs() {
        let bad = PdPayoffs { t: 1.0, r: 2.0, p: 0.0, s: -1.0 };
        assert!(make_ipd(bad, 0.9).is_err());
    }
}
