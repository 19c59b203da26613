//! Strategy factories for two-agent repeated games.
//!
//! All factories here are rule-backed: they read the joint action of each
//! remembered step and never need the state space enumerated up front.

use crate::game::Step;
use crate::strategy::{one_hot, KMemoryStrategy};

use super::ipd::{COOPERATE, DEFECT};

/// Action layout of a two-agent game: action counts of agent 0 and agent 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairLayout {
    pub n0: usize,
    pub n1: usize,
}

impl PairLayout {
    pub const IPD: PairLayout = PairLayout { n0: 2, n1: 2 };

    pub fn square(n: usize) -> Self {
        PairLayout { n0: n, n1: n }
    }

    pub fn action(&self, joint: usize, agent: usize) -> usize {
        if agent == 0 {
            joint / self.n1
        } else {
            joint % self.n1
        }
    }

    pub fn n_actions(&self, agent: usize) -> usize {
        if agent == 0 {
            self.n0
        } else {
            self.n1
        }
    }
}

/// True when some run of `m` consecutive flagged steps ends no more than `n`
/// steps before the present, with the whole run inside the window.
pub fn retaliation_due(flags: &[bool], n: usize, m: usize) -> bool {
    let len = flags.len();
    (0..n).any(|j| j + m <= len && flags[len - j - m..len - j].iter().all(|&d| d))
}

/// A windowed N-Tits-for-M-Tats player over arbitrary actions.
///
/// `defected(own, other)` decides whether the other agent's move counts as a
/// defection at a remembered step. The player uses `retaliate` while a
/// retaliation is due and `cooperate` otherwise; memory is `max(n, m)`.
pub fn windowed_retaliator<F>(
    agent: usize,
    layout: PairLayout,
    n: usize,
    m: usize,
    cooperate: usize,
    retaliate: usize,
    defected: F,
) -> KMemoryStrategy
where
    F: Fn(usize, usize) -> bool + Send + Sync + 'static,
{
    assert!(n >= 1 && m >= 1, "N and M must be at least 1");
    let other = 1 - agent;
    let n_actions = layout.n_actions(agent);
    KMemoryStrategy::from_rule(agent, n.max(m), n_actions, move |history: &[Step], _| {
        let flags: Vec<bool> = history
            .iter()
            .map(|s| defected(layout.action(s.joint, agent), layout.action(s.joint, other)))
            .collect();
        if retaliation_due(&flags, n, m) {
            one_hot(n_actions, retaliate)
        } else {
            one_hot(n_actions, cooperate)
        }
    })
}

/// N-Tits-for-M-Tats in the IPD: start with `C`; defect while some run of
/// `m` opponent defections ends within the last `n` steps of the
/// `max(n, m)` window. `(1, 1)` is Tit-for-Tat.
pub fn n_tits_for_m_tats(agent: usize, n: usize, m: usize) -> KMemoryStrategy {
    windowed_retaliator(agent, PairLayout::IPD, n, m, COOPERATE, DEFECT, |_, other| other == DEFECT)
}

pub fn tit_for_tat(agent: usize) -> KMemoryStrategy {
    n_tits_for_m_tats(agent, 1, 1)
}

pub fn all_defect(agent: usize) -> KMemoryStrategy {
    KMemoryStrategy::constant(agent, 2, DEFECT)
}

pub fn all_cooperate(agent: usize) -> KMemoryStrategy {
    KMemoryStrategy::constant(agent, 2, COOPERATE)
}

/// "X-D(s)-before-one-C" over arbitrary actions: play `cooperate` once the
/// last `x` own moves contain no `cooperate`, otherwise `defect`. Starts with
/// `defect` for `x ≥ 1`; `x = 0` always cooperates.
pub fn x_d_before_one_c_with(
    agent: usize,
    layout: PairLayout,
    x: usize,
    cooperate: usize,
    defect: usize,
) -> KMemoryStrategy {
    let n_actions = layout.n_actions(agent);
    KMemoryStrategy::from_rule(agent, x, n_actions, move |history: &[Step], _| {
        let full = history.len() >= x;
        let recent_coop = history
            .iter()
            .any(|s| layout.action(s.joint, agent) == cooperate);
        if full && !recent_coop {
            one_hot(n_actions, cooperate)
        } else {
            one_hot(n_actions, defect)
        }
    })
}

/// The IPD exploiter of N-Tits-for-M-Tats: defect `x` times, cooperate once.
pub fn x_d_before_one_c(agent: usize, x: usize) -> KMemoryStrategy {
    x_d_before_one_c_with(agent, PairLayout::IPD, x, COOPERATE, DEFECT)
}

/// N-Tits-for-M-Tats for the iterated traveler's dilemma with `n_bids`
/// ascending bids. A step counts as a defection when the other agent bid
/// strictly lower than this agent; cooperation bids the maximum and
/// retaliation bids the minimum.
pub fn ntfmt_in_spirit(agent: usize, n: usize, m: usize, n_bids: usize) -> KMemoryStrategy {
    windowed_retaliator(
        agent,
        PairLayout::square(n_bids),
        n,
        m,
        n_bids - 1,
        0,
        |own, other| other < own,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::ipd::{make_ipd, PdPayoffs};
    use crate::game::StochasticGame;

    /// Plays two deterministic strategies against each other and returns the
    /// action sequence of each.
    fn play(
        game: &StochasticGame,
        first: &KMemoryStrategy,
        second: &KMemoryStrategy,
        rounds: usize,
    ) -> (Vec<usize>, Vec<usize>) {
        let memory = first.memory().max(second.memory());
        let mut history: Vec<Step> = Vec::new();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..rounds {
            let x = first.action(&history, 0).unwrap();
            let y = second.action(&history, 0).unwrap();
            a.push(x);
            b.push(y);
            history.push(Step::new(0, game.joint_index(&[x, y])));
            if history.len() > memory {
                history.remove(0);
            }
        }
        (a, b)
    }

    fn ipd() -> StochasticGame {
        make_ipd(PdPayoffs::default(), 0.9).unwrap()
    }

    #[test]
    fn tft_mirrors_last_move() {
        let tft = tit_for_tat(1);
        assert_eq!(tft.memory(), 1);
        assert_eq!(tft.action(&[], 0).unwrap(), COOPERATE);
        let game = ipd();
        for own in 0..2 {
            for other in 0..2 {
                let step = Step::new(0, game.joint_index(&[other, own]));
                assert_eq!(tft.action(&[step], 0).unwrap(), other);
            }
        }
    }

    #[test]
    fn one_tit_for_two_tats_against_all_d() {
        let game = ipd();
        let (_, moves) = play(&game, &all_defect(0), &n_tits_for_m_tats(1, 1, 2), 5);
        assert_eq!(moves, vec![COOPERATE, COOPERATE, DEFECT, DEFECT, DEFECT]);
    }

    #[test]
    fn two_tits_for_two_tats_window() {
        let game = ipd();
        let s = n_tits_for_m_tats(1, 2, 2);
        assert_eq!(s.memory(), 2);
        let dd = Step::new(0, game.joint_index(&[DEFECT, COOPERATE]));
        let cd = Step::new(0, game.joint_index(&[COOPERATE, DEFECT]));
        assert_eq!(s.action(&[dd, dd], 0).unwrap(), DEFECT);
        // The window only holds two steps, so a run that ended one step ago
        // has already scrolled out.
        assert_eq!(s.action(&[dd, cd], 0).unwrap(), COOPERATE);
    }

    #[test]
    fn three_tits_for_one_tat_retaliates_three_rounds() {
        let game = ipd();
        let s = n_tits_for_m_tats(1, 3, 1);
        let d = Step::new(0, game.joint_index(&[DEFECT, COOPERATE]));
        let c = Step::new(0, game.joint_index(&[COOPERATE, DEFECT]));
        assert_eq!(s.action(&[d, c, c], 0).unwrap(), DEFECT);
        assert_eq!(s.action(&[c, d, c], 0).unwrap(), DEFECT);
        assert_eq!(s.action(&[c, c, c], 0).unwrap(), COOPERATE);
    }

    #[test]
    fn one_d_before_one_c_alternates() {
        let game = ipd();
        let (moves, _) = play(&game, &x_d_before_one_c(0, 1), &all_cooperate(1), 6);
        assert_eq!(moves, vec![DEFECT, COOPERATE, DEFECT, COOPERATE, DEFECT, COOPERATE]);
    }

    #[test]
    fn zero_d_before_one_c_is_all_c() {
        let game = ipd();
        let (moves, _) = play(&game, &x_d_before_one_c(0, 0), &all_defect(1), 4);
        assert!(moves.iter().all(|&a| a == COOPERATE));
    }

    #[test]
    fn exploiter_keeps_ntfmt_cooperating() {
        let game = ipd();
        for m in 1..=4 {
            for n in 1..=3 {
                let (mine, theirs) =
                    play(&game, &x_d_before_one_c(0, m - 1), &n_tits_for_m_tats(1, n, m), 4 * m);
                assert!(theirs.iter().all(|&a| a == COOPERATE), "n={n} m={m}");
                for (t, a) in mine.iter().enumerate() {
                    let expected = if (t + 1) % m == 0 { COOPERATE } else { DEFECT };
                    assert_eq!(*a, expected, "n={n} m={m} t={t}");
                }
            }
        }
    }

    #[test]
    fn itd_retaliator_follows_lower_bids() {
        let layout = PairLayout::square(11);
        let s = ntfmt_in_spirit(1, 1, 2, 11);
        let under = Step::new(0, 9 * 11 + 10);
        let equal = Step::new(0, 10 * 11 + 10);
        assert_eq!(layout.action(under.joint, 0), 9);
        assert_eq!(s.action(&[], 0).unwrap(), 10);
        assert_eq!(s.action(&[under], 0).unwrap(), 10);
        assert_eq!(s.action(&[under, under], 0).unwrap(), 0);
        assert_eq!(s.action(&[under, equal], 0).unwrap(), 10);
    }

    #[test]
    fn retaliation_due_cases() {
        assert!(!retaliation_due(&[], 1, 1));
        assert!(retaliation_due(&[true], 1, 1));
        assert!(!retaliation_due(&[true, false], 1, 1));
        assert!(retaliation_due(&[true, false], 2, 1));
        assert!(!retaliation_due(&[true, false, true], 2, 2));
    }
}
