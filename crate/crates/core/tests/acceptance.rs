//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL ...` line with its measurement and runtime.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kmem::cmdp::{decompose, reconstruction_error, roundtrip_check};
use kmem::domains::ipd::{make_ipd, PdPayoffs, DEFECT};
use kmem::domains::phase::{classify_path, phase_transition_gamma, PhasePattern};
use kmem::domains::qlearn::{rollout_return, tabular_q_learning, QLearningConfig};
use kmem::domains::strategies::{n_tits_for_m_tats, ntfmt_in_spirit};
use kmem::domains::td::{make_td, td_potential_check, TdSpec};
use kmem::game::{game_space, AugSpace, GameParts, StochasticGame, Step};
use kmem::mdp::best_response;
use kmem::mixed::{eval_vs_mixed, induce_behavioral, utility_gap, MixedStrategy};
use kmem::nash::{find_ne, verify_ne, NeOptions};
use kmem::pomdp::{build_br_pomdp, solve_br_pomdp};
use kmem::spec::{load_cmdp, load_mixed_instance, random_strategy};
use kmem::strategy::{lift_strategy, KMemoryStrategy};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn verdict(n: u32, ok: bool, detail: &str, elapsed: Duration, limit: Option<Duration>) {
    let in_time = limit.map_or(true, |l| elapsed < l);
    let limit_text = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
    let status = if ok && in_time { "PASS" } else { "FAIL" };
    println!("criterion {n}: {status} {detail}; {elapsed:.2?}{limit_text}");
    assert!(ok, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its runtime limit: {elapsed:?}");
}

// Reference table for the best response to 2-Tits-for-2-Tats. Its rows
// where the opponent retaliates were computed with S = -2, so only the
// action columns are compared.
const TWO_TITS_TABLE: &str = "
| []           | D           | C           |  15.2632 |
| [D, D]       | C           | C           |  14.7368 |
| [D, C]       | C           | C           |  14.7368 |
| [C, D]       | D           | C           |  15.2632 |
| [C, C]       | D           | C           |  15.2632 |
| [D, D, D, D] | C           | D           |  11.7368 |
| [D, D, D, C] | C           | D           |  11.7368 |
| [D, D, C, D] | D           | C           |  15.2632 |
| [D, D, C, C] | D           | C           |  15.2632 |
| [D, C, D, D] | C           | D           |  11.7368 |
| [D, C, D, C] | C           | D           |  11.7368 |
| [D, C, C, D] | D           | C           |  15.2632 |
| [D, C, C, C] | D           | C           |  15.2632 |
| [C, D, D, D] | C           | C           |  14.7368 |
| [C, D, D, C] | C           | C           |  14.7368 |
| [C, D, C, D] | D           | C           |  15.2632 |
| [C, D, C, C] | D           | C           |  15.2632 |
| [C, C, D, D] | C           | C           |  14.7368 |
| [C, C, D, C] | C           | C           |  14.7368 |
| [C, C, C, D] | D           | C           |  15.2632 |
| [C, C, C, C] | D           | C           |  15.2632 |
";

#[test]
fn criterion_01_best_response_table() {
    let start = Instant::now();
    let p = PdPayoffs::default();
    let gamma = 0.9;
    // Against 2-Tits-for-2-Tats the responder alternates D, C forever.
    let oracle = (p.t + gamma * p.r) / (1.0 - gamma * gamma);
    let game = make_ipd(p, gamma).unwrap();
    let opp = n_tits_for_m_tats(1, 2, 2);
    let br = best_response(&game, 0, &opp, 1e-10).unwrap();
    let space = br.mdp.space();
    let root = br.root_values()[0];

    let mut mismatches = Vec::new();
    let expected: HashMap<&str, (&str, &str)> = TWO_TITS_TABLE
        .lines()
        .filter(|l| l.starts_with('|'))
        .map(|l| {
            let cells: Vec<&str> = l.trim_matches('|').split(" | ").map(str::trim).collect();
            (cells[0], (cells[1], cells[2]))
        })
        .collect();
    for (idx, aug) in space.states().iter().enumerate() {
        let label = game.aug_label(aug);
        let own = game.actions(0)[br.actions[idx]].as_str();
        let other = game.actions(1)[opp.action(&aug.history, aug.state).unwrap()].as_str();
        match expected.get(label.as_str()) {
            Some(&(e_own, e_other)) if e_own == own && e_other == other => {}
            _ => mismatches.push(label),
        }
    }
    let ok = (oracle - 15.2632).abs() < 1e-4
        && (root - 15.2632).abs() <= 1e-3
        && space.len() == 21
        && expected.len() == 21
        && mismatches.is_empty();
    verdict(
        1,
        ok,
        &format!(
            "oracle {oracle:.4} at gamma 0.9, root {root:.4}, {} rows, mismatched rows {mismatches:?}",
            space.len()
        ),
        start.elapsed(),
        Some(Duration::from_secs(1)),
    );
}

#[test]
fn criterion_02_phase_transitions() {
    let start = Instant::now();
    let p = PdPayoffs::default();
    let g1 = phase_transition_gamma(1, &p).unwrap();
    let g2 = phase_transition_gamma(2, &p).unwrap();
    let g3 = phase_transition_gamma(3, &p).unwrap();
    // For M = 1 the crossing solves R/(1-g) = T + gP/(1-g).
    let closed = (p.t - p.r) / (p.t - p.p);
    let ok = (g1 - closed).abs() < 1e-9
        && (closed - 0.5).abs() < 1e-15
        && (g2 - 0.366025).abs() <= 1e-5
        && (g3 - 0.342508).abs() <= 1e-5;
    verdict(
        2,
        ok,
        &format!("gamma* = {g1:.9}, {g2:.6}, {g3:.6}"),
        start.elapsed(),
        Some(Duration::from_secs(1)),
    );
}

fn on_path_defections(game: &StochasticGame, own: &KMemoryStrategy, opp: &KMemoryStrategy, rounds: usize) -> Vec<bool> {
    let window = own.memory().max(opp.memory());
    let mut history: Vec<Step> = Vec::new();
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let a = own.action(&history, 0).unwrap();
        let b = opp.action(&history, 0).unwrap();
        out.push(a == DEFECT);
        history.push(Step::new(0, game.joint_index(&[a, b])));
        if history.len() > window {
            history.remove(0);
        }
    }
    out
}

#[test]
fn criterion_03_phase_patterns() {
    let start = Instant::now();
    let p = PdPayoffs::default();
    let mut failures = Vec::new();
    for m in 1..=3usize {
        let g = phase_transition_gamma(m as u32, &p).unwrap();
        for n in 1..=3usize {
            let opp = n_tits_for_m_tats(1, n, m);
            for (gamma, want) in [(g - 0.05, PhasePattern::AllD), (g + 0.05, PhasePattern::Cycle)] {
                let game = make_ipd(p, gamma).unwrap();
                let br = best_response(&game, 0, &opp, 1e-10).unwrap();
                let path = on_path_defections(&game, &br.strategy, &opp, 12 * m.max(2));
                let got = classify_path(&path, m);
                if got != want {
                    failures.push(format!("N={n} M={m} gamma={gamma:.4}: {got}"));
                }
            }
        }
    }
    verdict(
        3,
        failures.is_empty(),
        &format!("18 grid cells, failures {failures:?}"),
        start.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn criterion_04_itd_q_learning() {
    let start = Instant::now();
    let spec = TdSpec::one_shot(2, 2.0, 0, 10);
    let game = make_td(&spec, 0.9).unwrap();
    let opp = ntfmt_in_spirit(1, 1, 5, spec.n_bids());
    let mut payoffs = Vec::new();
    for seed in 0..3 {
        let config = QLearningConfig {
            seed,
            ..QLearningConfig::default()
        };
        let result = tabular_q_learning(&game, 0, &opp, 3, &config).unwrap();
        payoffs.push(rollout_return(&game, 0, &result.policy, &opp, 0, 100, 1.0).unwrap());
    }
    let hits = payoffs.iter().filter(|&&v| v == 1075.0).count();
    verdict(
        4,
        hits >= 2,
        &format!("100-round payoffs {payoffs:?}, {hits} of 3 equal 1075"),
        start.elapsed(),
        Some(Duration::from_secs(300)),
    );
}

fn random_stationary(rng: &mut ChaCha8Rng, agent: usize, n: usize) -> KMemoryStrategy {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let rest: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - rest;
    KMemoryStrategy::stationary(agent, probs).unwrap()
}

fn random_repeated_game(rng: &mut ChaCha8Rng, n0: usize, n1: usize) -> StochasticGame {
    let joint = n0 * n1;
    StochasticGame::new(GameParts {
        agents: vec!["a".into(), "b".into()],
        states: vec!["s".into()],
        actions: vec![
            (0..n0).map(|i| format!("x{i}")).collect(),
            (0..n1).map(|i| format!("y{i}")).collect(),
        ],
        transitions: vec![vec![vec![(0, 1.0)]; joint]],
        rewards: vec![(0..joint).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect()],
        gamma: rng.gen_range(0.1..0.95),
        initial_states: vec![0],
    })
    .unwrap()
}

#[test]
fn criterion_05_repeated_games_have_no_gap() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n0, n1) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let game = random_repeated_game(&mut rng, n0, n1);
        let size = rng.gen_range(1..=3);
        let support: Vec<_> = (0..size).map(|_| random_stationary(&mut rng, 1, n1)).collect();
        let raw: Vec<f64> = (0..size).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;
        let mixture = MixedStrategy::new(support, weights).unwrap();
        let own = random_stationary(&mut rng, 0, n0);
        worst = worst.max(utility_gap(&game, 0, &own, &mixture, 1e-13).unwrap());
    }
    verdict(
        5,
        worst <= 1e-9,
        &format!("max |V_mix - V_beh| over 200 games = {worst:.3e}"),
        start.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn criterion_06_witness_gap() {
    let start = Instant::now();
    let inst = load_mixed_instance(&fixture("mixed_witness.json")).unwrap();
    let own = inst.strategy.expect("witness fixture names an own strategy");
    let gap = utility_gap(&inst.game, inst.agent, &own, &inst.mixture, 1e-12).unwrap();
    verdict(6, gap > 0.01, &format!("utility gap {gap:.6}"), start.elapsed(), None);
}

#[test]
fn criterion_07_nash_certificates() {
    let start = Instant::now();
    let game = make_ipd(PdPayoffs::default(), 0.9).unwrap();
    let init = [KMemoryStrategy::uniform(0, 2), KMemoryStrategy::uniform(1, 2)];
    let mut details = Vec::new();
    let mut ok = true;
    let mut stationary = None;
    for k in 0..=2 {
        let result = find_ne(&game, k, &init, &NeOptions::default()).unwrap();
        let check = verify_ne(&game, &result.profile.strategies, 1e-6).unwrap();
        ok &= check.is_ne && check.max_exploitability() <= 1e-6;
        details.push(format!("K={k} exploitability {:.2e}", check.max_exploitability()));
        if k == 0 {
            stationary = Some(result.profile.strategies.clone());
        }
    }
    let lifted: Vec<_> = stationary
        .unwrap()
        .iter()
        .map(|s| lift_strategy(s, 2).unwrap())
        .collect();
    let check = verify_ne(&game, &lifted, 1e-6).unwrap();
    ok &= check.is_ne && check.max_exploitability() <= 1e-6;
    details.push(format!("lifted K=0 to K=2 exploitability {:.2e}", check.max_exploitability()));
    verdict(7, ok, &details.join(", "), start.elapsed(), None);
}

/// Exact values of a deterministic own policy by a direct linear solve of
/// `(I - γP)v = r` over the augmented space.
fn exact_values(game: &StochasticGame, space: &AugSpace, own: &[usize], opp: &[Vec<f64>]) -> DVector<f64> {
    let n = space.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for x in 0..n {
        let s = space.get(x).state;
        for (o, &po) in opp[x].iter().enumerate() {
            if po == 0.0 {
                continue;
            }
            let joint = game.joint_index(&[own[x], o]);
            r[x] += po * game.reward(s, joint, 0);
            for &(next, pt) in game.successors(s, joint) {
                a[(x, space.successor(x, joint, next))] -= game.gamma() * po * pt;
            }
        }
    }
    a.lu().solve(&r).expect("I - γP is invertible for γ < 1")
}

fn sparse_random_game(rng: &mut ChaCha8Rng) -> StochasticGame {
    let n = rng.gen_range(1..=3);
    let (n0, n1) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let joint = n0 * n1;
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..n {
        let mut t = Vec::new();
        let mut r = Vec::new();
        for _ in 0..joint {
            let a = rng.gen_range(0..n);
            if rng.gen_bool(0.7) {
                t.push(vec![(a, 1.0)]);
            } else {
                let p = rng.gen_range(0.1..0.9);
                let b = rng.gen_range(0..n);
                t.push(vec![(a, p), (b, 1.0 - p)]);
            }
            r.push(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        }
        transitions.push(t);
        rewards.push(r);
    }
    StochasticGame::new(GameParts {
        agents: vec!["a".into(), "b".into()],
        states: (0..n).map(|i| format!("s{i}")).collect(),
        actions: vec![
            (0..n0).map(|i| format!("x{i}")).collect(),
            (0..n1).map(|i| format!("y{i}")).collect(),
        ],
        transitions,
        rewards,
        gamma: rng.gen_range(0.5..0.95),
        initial_states: vec![0],
    })
    .unwrap()
}

#[test]
fn criterion_08_best_response_dominance() {
    const MAX_AUG: usize = 14;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut games = 0;
    let mut strategies = 0u64;
    let mut worst = f64::NEG_INFINITY;
    while games < 50 {
        let game = sparse_random_game(&mut rng);
        let k = rng.gen_range(0..=1);
        let space = game_space(&game, k).unwrap();
        // Rejection keeps the exhaustive enumeration small.
        if space.len() > MAX_AUG {
            continue;
        }
        games += 1;
        let opp = random_strategy(&game, 1, k, rng.gen(), false).unwrap();
        let br = best_response(&game, 0, &opp, 1e-12).unwrap();
        let opp_table = opp.materialize(&space).unwrap();
        let n0 = game.n_actions(0);
        let total = (n0 as u64).pow(space.len() as u32);
        for code in 0..total {
            let mut rest = code;
            let own: Vec<usize> = (0..space.len())
                .map(|_| {
                    let a = (rest % n0 as u64) as usize;
                    rest /= n0 as u64;
                    a
                })
                .collect();
            let v = exact_values(&game, &space, &own, &opp_table);
            for x in 0..space.len() {
                worst = worst.max(v[x] - br.values.values[x]);
            }
            strategies += 1;
        }
    }
    verdict(
        8,
        worst <= 1e-6,
        &format!("50 games, {strategies} deterministic strategies, max excess over BR {worst:.3e}"),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
}

/// Brute force over every deterministic depth-3 policy tree. A tree maps
/// each observed history of joint actions to an own action; its value is
/// averaged over the hidden type and the type's own randomness.
fn tree_optimum(game: &StochasticGame, mixture: &MixedStrategy, depth: usize) -> f64 {
    let n_own = game.n_actions(0);
    let n_opp = game.n_actions(1);
    // Observation histories in creation order; the tree assigns one action each.
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 1..depth {
        let mut next = Vec::new();
        for h in &frontier {
            for a in 0..n_own {
                for o in 0..n_opp {
                    let mut g: Vec<usize> = h.clone();
                    g.push(game.joint_index(&[a, o]));
                    next.push(g);
                }
            }
        }
        nodes.extend(next.iter().cloned());
        frontier = next;
    }
    let index: HashMap<Vec<usize>, usize> = nodes.iter().cloned().enumerate().map(|(i, h)| (h, i)).collect();
    let total = (n_own as u64).pow(nodes.len() as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut rest = code;
        let tree: Vec<usize> = (0..nodes.len())
            .map(|_| {
                let a = (rest % n_own as u64) as usize;
                rest /= n_own as u64;
                a
            })
            .collect();
        let mut value = 0.0;
        for (w, opp) in mixture.weights().iter().zip(mixture.support()) {
            // (observed joints, probability)
            let mut paths: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
            let mut discount = 1.0;
            for _ in 0..depth {
                let mut next = Vec::new();
                for (h, p) in &paths {
                    let a = tree[index[h]];
                    let window: Vec<Step> = h
                        .iter()
                        .rev()
                        .take(opp.memory())
                        .rev()
                        .map(|&j| Step::new(0, j))
                        .collect();
                    let probs = opp.probs(&window, 0).unwrap();
                    for (o, &po) in probs.iter().enumerate() {
                        if po == 0.0 {
                            continue;
                        }
                        let joint = game.joint_index(&[a, o]);
                        value += w * discount * p * po * game.reward(0, joint, 0);
                        let mut g = h.clone();
                        g.push(joint);
                        next.push((g, p * po));
                    }
                }
                paths = next;
                discount *= game.gamma();
            }
        }
        best = best.max(value);
    }
    best
}

#[test]
fn criterion_09_belief_planner() {
    let start = Instant::now();
    let tiny = load_mixed_instance(&fixture("tiny_two_support.json")).unwrap();
    let epsilon: f64 = tiny.notes["epsilon"].parse().unwrap();
    let pomdp = build_br_pomdp(&tiny.game, 0, &tiny.mixture).unwrap();
    let solution = solve_br_pomdp(&pomdp, epsilon).unwrap();
    let oracle = tree_optimum(&tiny.game, &tiny.mixture, 3);
    let tiny_diff = (solution.root_values[0] - oracle).abs();

    let witness = load_mixed_instance(&fixture("mixed_witness.json")).unwrap();
    let omega = induce_behavioral(&witness.mixture).unwrap();
    let constant = best_response(&witness.game, witness.agent, &omega, 1e-12).unwrap();
    let constant_value = eval_vs_mixed(&witness.game, witness.agent, &constant.strategy, &witness.mixture, 1e-12).unwrap()[0];
    let planner = solve_br_pomdp(&build_br_pomdp(&witness.game, witness.agent, &witness.mixture).unwrap(), 1e-9)
        .unwrap()
        .root_values[0];
    let ok = solution.horizon == 3 && tiny_diff <= 1e-9 && planner > constant_value;
    verdict(
        9,
        ok,
        &format!(
            "tiny: horizon {}, planner {:.10} vs tree oracle {:.10}; witness: planner {planner:.6} > constant-memory {constant_value:.6}",
            solution.horizon, solution.root_values[0], oracle
        ),
        start.elapsed(),
        None,
    );
}

fn svd_rank(m: &[Vec<f64>]) -> usize {
    let mat = DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j]);
    mat.svd(false, false).singular_values.iter().filter(|&&s| s > 1e-8).count()
}

#[test]
fn criterion_10_decomposition_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let mut rank_errors = 0;
    for _ in 0..100 {
        let rows = rng.gen_range(1..=8);
        let cols = rng.gen_range(1..=10);
        let rank = rng.gen_range(1..=rows.min(cols));
        let left: Vec<Vec<f64>> = (0..rows).map(|_| (0..rank).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let right: Vec<Vec<f64>> = (0..rank).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let m: Vec<Vec<f64>> = left
            .iter()
            .map(|l| (0..cols).map(|j| l.iter().zip(&right).map(|(a, r)| a * r[j]).sum()).collect())
            .collect();
        let d = decompose(&m, 1e-9).unwrap();
        worst = worst.max(reconstruction_error(&m, &d.coefficients, &d.basis));
        if d.rank != svd_rank(&m) {
            rank_errors += 1;
        }
    }
    let cmdp = load_cmdp(&fixture("valid_cmdp.json")).unwrap();
    let rt = roundtrip_check(&cmdp, 1e-4).unwrap();
    let ok = worst <= 1e-9 && rank_errors == 0 && !rt.report_only && rt.gap <= 2e-4;
    verdict(
        10,
        ok,
        &format!(
            "max reconstruction error {worst:.3e}, rank mismatches {rank_errors}; fixture gap {:.3e} (cmdp {:.6}, game {:.6})",
            rt.gap,
            rt.cmdp_value[0],
            rt.sg_br_value.as_ref().map_or(f64::NAN, |v| v[0])
        ),
        start.elapsed(),
        None,
    );
}

#[test]
fn criterion_11_traveler_dilemma_fip() {
    let start = Instant::now();
    let report = td_potential_check(&TdSpec::one_shot(2, 2.0, 2, 10)).unwrap();
    let ok = report.has_fip && report.sinks == vec![vec![2, 2]];
    verdict(
        11,
        ok,
        &format!("FIP {}, sinks {:?}", report.has_fip, report.sinks),
        start.elapsed(),
        None,
    );
}
