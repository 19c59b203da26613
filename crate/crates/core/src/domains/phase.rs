//! Closed forms for the best response against N-Tits-for-M-Tats and the
//! discount at which it switches between All-D and the
//! (M−1)-D-before-one-C cycle.

use crate::error::{Error, Result};
use crate::game::{StochasticGame, Step};
use crate::mdp::best_response;
use crate::strategy::KMemoryStrategy;

use super::ipd::{make_ipd, PdPayoffs, DEFECT};
use super::strategies::n_tits_for_m_tats;

/// Value of the cycle "T for M−1 rounds, then R", repeated forever:
/// `[T(1−γ^{M−1})/(1−γ) + γ^{M−1}R] / (1−γ^M)`.
pub fn cycle_value(m: u32, payoffs: &PdPayoffs, gamma: f64) -> f64 {
    let gm1 = gamma.powi(m as i32 - 1);
    let gm = gamma.powi(m as i32);
    (payoffs.t * geometric(gamma, m - 1) + gm1 * payoffs.r) / (1.0 - gm)
}

/// Value of defecting forever: T for M rounds while the opponent still
/// cooperates, then P: `T(1−γ^M)/(1−γ) + γ^M P/(1−γ)`.
pub fn all_d_value(m: u32, payoffs: &PdPayoffs, gamma: f64) -> f64 {
    payoffs.t * geometric(gamma, m) + gamma.powi(m as i32) * payoffs.p / (1.0 - gamma)
}

/// `1 + γ + … + γ^{n−1}`, exact at γ = 1.
fn geometric(gamma: f64, n: u32) -> f64 {
    (0..n).map(|j| gamma.powi(j as i32)).sum()
}

/// The discount γ* in (0, 1) at which the cycle and All-D values cross.
///
/// Scans a grid for a sign change of `cycle_value − all_d_value` and
/// bisects it to 1e-10.
pub fn phase_transition_gamma(m: u32, payoffs: &PdPayoffs) -> Result<f64> {
    if m == 0 {
        return Err(Error::mismatch("M must be at least 1"));
    }
    payoffs.validate()?;
    let f = |g: f64| cycle_value(m, payoffs, g) - all_d_value(m, payoffs, g);
    const LO: f64 = 1e-6;
    const HI: f64 = 1.0 - 1e-6;
    const STEPS: usize = 4096;
    let mut prev_g = LO;
    let mut prev_f = f(LO);
    for i in 1..=STEPS {
        let g = LO + (HI - LO) * i as f64 / STEPS as f64;
        let fg = f(g);
        if fg == 0.0 {
            return Ok(g);
        }
        if prev_f.signum() != fg.signum() {
            return Ok(bisect(&f, prev_g, g, prev_f));
        }
        prev_g = g;
        prev_f = fg;
    }
    Err(Error::NoSolution(format!(
        "cycle and All-D values never cross in (0, 1) for M = {m}"
    )))
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == f_lo.signum() {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// What the best response does on the path of play against N-Tits-for-M-Tats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhasePattern {
    AllD,
    Cycle,
    Other,
}

impl std::fmt::Display for PhasePattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhasePattern::AllD => "all-d",
            PhasePattern::Cycle => "cycle",
            PhasePattern::Other => "other",
        })
    }
}

/// Classifies an on-path action sequence of the responder (`true` = D).
pub fn classify_path(defects: &[bool], m: usize) -> PhasePattern {
    if defects.iter().all(|&d| d) {
        return PhasePattern::AllD;
    }
    let cycle = defects
        .iter()
        .enumerate()
        .all(|(t, &d)| d == ((t + 1) % m != 0));
    if cycle {
        PhasePattern::Cycle
    } else {
        PhasePattern::Other
    }
}

/// The responder's on-path defection flags over `rounds` rounds of
/// deterministic play from the first initial state.
pub fn on_path_defections(
    game: &StochasticGame,
    own: &KMemoryStrategy,
    opponent: &KMemoryStrategy,
    rounds: usize,
) -> Result<Vec<bool>> {
    let agent = own.agent();
    let window = own.memory().max(opponent.memory());
    let mut state = game.initial_states()[0];
    let mut history: Vec<Step> = Vec::new();
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let a = own.action(&history, state)?;
        let b = opponent.action(&history, state)?;
        out.push(a == DEFECT);
        let joint = game.compose(agent, a, b);
        history.push(Step::new(state, joint));
        if history.len() > window {
            history.remove(0);
        }
        state = game.successors(state, joint)[0].0;
    }
    Ok(out)
}

/// One cell of the phase diagram.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PhasePoint {
    pub n: usize,
    pub m: usize,
    pub gamma_star: f64,
    pub gamma: f64,
    pub pattern: PhasePattern,
    /// Root value of the best response.
    pub value: f64,
}

/// Best response of agent 0 against N-Tits-for-M-Tats at `gamma`, with its
/// on-path pattern over `rounds` rounds.
pub fn best_response_pattern(payoffs: &PdPayoffs, n: usize, m: usize, gamma: f64, rounds: usize) -> Result<PhasePoint> {
    let game = make_ipd(*payoffs, gamma)?;
    let opponent = n_tits_for_m_tats(1, n, m);
    let br = best_response(&game, 0, &opponent, 1e-10)?;
    let path = on_path_defections(&game, &br.strategy, &opponent, rounds)?;
    Ok(PhasePoint {
        n,
        m,
        gamma_star: phase_transition_gamma(m as u32, payoffs)?,
        gamma,
        pattern: classify_path(&path, m),
        value: br.root_values()[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m1_matches_closed_form() {
        let p = PdPayoffs::default();
        let g = phase_transition_gamma(1, &p).unwrap();
        assert!((g - (p.r - p.t) / (p.p - p.t)).abs() < 1e-9);
    }

    #[test]
    fn known_crossings() {
        let p = PdPayoffs::default();
        assert!((phase_transition_gamma(2, &p).unwrap() - 0.366025).abs() < 1e-5);
        assert!((phase_transition_gamma(3, &p).unwrap() - 0.342508).abs() < 1e-5);
    }

    #[test]
    fn crossing_satisfies_polynomial_identity() {
        let p = PdPayoffs::default();
        for m in 1..=5u32 {
            let g = phase_transition_gamma(m, &p).unwrap();
            let gm = g.powi(m as i32);
            let gm1 = g.powi(m as i32 - 1);
            let lhs = p.t * (1.0 - gm) * (1.0 - gm) + p.p * gm * (1.0 - gm);
            let rhs = p.t * (1.0 - gm1) + p.r * gm1 * (1.0 - g);
            assert!((lhs - rhs).abs() < 1e-8, "m={m}");
        }
    }

    #[test]
    fn m2_crossing_is_sqrt3_minus_1_over_2() {
        // With the default payoffs the M = 2 equation reduces to
        // 2γ² + 2γ − 1 = 0.
        let g = phase_transition_gamma(2, &PdPayoffs::default()).unwrap();
        assert!((g - (3f64.sqrt() - 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn patterns_flip_at_the_crossing() {
        let p = PdPayoffs::default();
        let g = phase_transition_gamma(2, &p).unwrap();
        assert_eq!(best_response_pattern(&p, 2, 2, g - 0.05, 24).unwrap().pattern, PhasePattern::AllD);
        assert_eq!(best_response_pattern(&p, 2, 2, g + 0.05, 24).unwrap().pattern, PhasePattern::Cycle);
        assert_eq!(best_response_pattern(&p, 1, 2, 0.95, 24).unwrap().pattern, PhasePattern::Cycle);
        assert_eq!(best_response_pattern(&p, 1, 2, 0.1, 24).unwrap().pattern, PhasePattern::AllD);
    }

    #[test]
    fn classification() {
        assert_eq!(classify_path(&[true; 6], 2), PhasePattern::AllD);
        assert_eq!(classify_path(&[true, false, true, false], 2), PhasePattern::Cycle);
        assert_eq!(classify_path(&[false, false], 1), PhasePattern::Cycle);
        assert_eq!(classify_path(&[true, true, false], 2), PhasePattern::Other);
    }
}
