use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kmem::domains::ipd::{make_ipd, PdPayoffs};
use kmem::domains::strategies::n_tits_for_m_tats;
use kmem::mdp::best_response;
use kmem::report::parse_strategy_table;

fn kmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmem"))
        .args(args)
        .env_remove("KMEM_STATE_CAP")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn jsonl(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn br_against_two_tits_for_two_tats() {
    let text = stdout(&kmem(&["br", "--game", "ipd", "--opponent", "ntfmt:2,2", "--gamma", "0.9", "--agent", "0"]));
    assert!(text.contains("val = 15.26"));
    let rows = text.lines().filter(|l| l.starts_with("| [")).count();
    assert_eq!(rows, 21);

    let rows = jsonl(&stdout(&kmem(&["br", "--opponent", "ntfmt:2,2", "--format", "jsonl"])));
    assert_eq!(rows.len(), 21);
    assert!((rows[0]["value"].as_f64().unwrap() - 15.2632).abs() < 1e-3);
}

#[test]
fn br_against_all_d_is_all_d() {
    let rows = jsonl(&stdout(&kmem(&["br", "--opponent", "all-d", "--gamma", "0.9", "--format", "jsonl"])));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["action"], "D");
    assert!(rows[0]["value"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn emitted_table_parses_back_to_the_best_response() {
    let text = stdout(&kmem(&["br", "--opponent", "ntfmt:2,2"]));
    let game = make_ipd(PdPayoffs::default(), 0.9).unwrap();
    let br = best_response(&game, 0, &n_tits_for_m_tats(1, 2, 2), 1e-10).unwrap();
    let parsed = parse_strategy_table(&game, 0, br.mdp.space(), &text).unwrap();
    assert!(parsed.same_behaviour(&br.strategy, br.mdp.space()).unwrap());
}

#[test]
fn malformed_game_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(
        dir.path(),
        "game.json",
        r#"{"agents": ["a", "b"], "states": ["s"], "actions": [["x"], ["y"]],
            "transitions": [{"state": "s", "action": ["x", "y"], "next": {"s": "one"}}],
            "rewards": [], "gamma": 0.9, "initial_states": ["s"]}"#,
    );
    let out = kmem(&["br", "--game", &game, "--opponent", "uniform"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("transitions[0].next"), "{err}");
}

#[test]
fn size_cap_exits_3() {
    let out = Command::new(env!("CARGO_BIN_EXE_kmem"))
        .args(["br", "--opponent", "ntfmt:2,2"])
        .env("KMEM_STATE_CAP", "4")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ne_stationary_ipd_is_mutual_defection() {
    let text = stdout(&kmem(&["ne", "-k", "0"]));
    assert!(text.contains("| []          | D           | D           |"), "{text}");
    let recs = jsonl(&stdout(&kmem(&["ne", "-k", "2", "--seed", "0", "--format", "jsonl"])));
    assert_eq!(recs[0]["is_ne"], true);
    assert!(recs[0]["max_exploitability"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn ne_without_convergence_still_exits_0() {
    let recs = jsonl(&stdout(&kmem(&["ne", "-k", "1", "--max-iters", "2", "--format", "jsonl"])));
    assert_eq!(recs[0]["converged"], false);
}

#[test]
fn ne_trace_and_multistart() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let t = trace.to_string_lossy();
    let recs = jsonl(&stdout(&kmem(&[
        "ne", "-k", "1", "--starts", "3", "--seed", "4", "--threads", "3", "--format", "jsonl", "--trace", &t,
    ])));
    assert_eq!(recs.len(), 3);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("start,iteration,residual"));
}

#[test]
fn phase_grid_patterns() {
    let recs = jsonl(&stdout(&kmem(&["phase", "--offset", "0.05", "--format", "jsonl"])));
    assert_eq!(recs.len(), 18);
    for (i, r) in recs.iter().enumerate() {
        let want = if i % 2 == 0 { "all-d" } else { "cycle" };
        assert_eq!(r["pattern"], want, "{r}");
    }
    let recs = jsonl(&stdout(&kmem(&[
        "phase", "--n-max", "1", "--m-max", "2", "--gammas", "0.1,0.95", "--format", "jsonl",
    ])));
    let m2: Vec<_> = recs.iter().filter(|r| r["m"] == 2).collect();
    assert_eq!(m2[0]["pattern"], "all-d");
    assert_eq!(m2[1]["pattern"], "cycle");
}

#[test]
fn machine_output_is_deterministic() {
    for args in [
        vec!["phase", "--format", "csv", "--gamma-steps", "5"],
        vec!["ne", "-k", "1", "--starts", "2", "--format", "csv"],
    ] {
        assert_eq!(stdout(&kmem(&args)), stdout(&kmem(&args)));
    }
}

#[test]
fn mixed_witness_has_a_gap() {
    let recs = jsonl(&stdout(&kmem(&[
        "mixed", "--instance", &fixture("mixed_witness.json"), "--format", "jsonl",
    ])));
    assert!(recs[0]["utility_gap"].as_f64().unwrap() > 0.01);
    assert!(recs[0]["planner"].as_f64().unwrap() > recs[0]["constant_memory_br"].as_f64().unwrap());
}

#[test]
fn mixed_repeated_game_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let mixture = write(
        dir.path(),
        "mix.json",
        r#"{"support": [{"strategy": {"agent": 1, "builtin": "all-c"}},
                        {"strategy": {"agent": 1, "builtin": "all-d"}}],
            "weights": [0.3, 0.7]}"#,
    );
    let recs = jsonl(&stdout(&kmem(&["mixed", "--mixture", &mixture, "--strategy", "uniform", "--format", "jsonl"])));
    assert!(recs[0]["utility_gap"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn belief_trace_identifies_the_type() {
    let dir = tempfile::tempdir().unwrap();
    let mixture = write(
        dir.path(),
        "mix.json",
        r#"{"support": [{"strategy": {"agent": 1, "builtin": "tft"}},
                        {"strategy": {"agent": 1, "builtin": "all-d"}}],
            "weights": [0.5, 0.5]}"#,
    );
    let trace = dir.path().join("trace.jsonl");
    let t = trace.to_string_lossy();
    stdout(&kmem(&["mixed", "--mixture", &mixture, "--trace", &t, "--trace-type", "1", "--trace-steps", "3"]));
    let steps = jsonl(&std::fs::read_to_string(&trace).unwrap());
    assert_eq!(steps.len(), 3);
    // Tit-for-tat opens with C, so one round of D reveals the type.
    assert_eq!(steps[0]["posterior"], "0 1");
}

#[test]
fn singleton_mixture_matches_br() {
    let dir = tempfile::tempdir().unwrap();
    let mixture = write(
        dir.path(),
        "mix.json",
        r#"{"support": [{"strategy": {"agent": 1, "builtin": "ntfmt:2,2"}}], "weights": [1.0]}"#,
    );
    let recs = jsonl(&stdout(&kmem(&["mixed", "--mixture", &mixture, "--format", "jsonl"])));
    let br = jsonl(&stdout(&kmem(&["br", "--opponent", "ntfmt:2,2", "--format", "jsonl"])));
    let v = br[0]["value"].as_f64().unwrap();
    assert!((recs[0]["constant_memory_br"].as_f64().unwrap() - v).abs() < 1e-8);
    assert!((recs[0]["planner"].as_f64().unwrap() - v).abs() < 1e-3);
}

#[test]
fn decompose_identity_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", "[[1, 0, 0], [0, 1, 0], [0, 0, 1]]");
    let recs = jsonl(&stdout(&kmem(&["decompose", "--matrix", &m, "--format", "jsonl"])));
    assert_eq!(recs[0]["rank"], 3);
    let basis: Vec<Vec<f64>> = serde_json::from_str(recs[0]["basis"].as_str().unwrap()).unwrap();
    assert_eq!(basis, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
}

#[test]
fn decompose_fixture_round_trip_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let game = dir.path().join("game.json");
    let mix = dir.path().join("mix.json");
    let recs = jsonl(&stdout(&kmem(&[
        "decompose",
        "--cmdp",
        &fixture("valid_cmdp.json"),
        "--roundtrip",
        "--format",
        "jsonl",
        "--game-out",
        &game.to_string_lossy(),
        "--mixture-out",
        &mix.to_string_lossy(),
    ])));
    assert!(recs[0]["gap"].as_f64().unwrap() <= 2e-4);
    let per_state = jsonl(&stdout(&kmem(&["decompose", "--cmdp", &fixture("valid_cmdp.json"), "--format", "jsonl"])));
    assert!(per_state.iter().all(|r| r["rank"] == 2));
    // The exported game and mixture feed back into the mixed command.
    let out = jsonl(&stdout(&kmem(&[
        "mixed",
        "--game",
        &game.to_string_lossy(),
        "--mixture",
        &mix.to_string_lossy(),
        "--format",
        "jsonl",
        "--pomdp-epsilon",
        "1e-4",
    ])));
    assert!((out[0]["planner"].as_f64().unwrap() - recs[0]["cmdp_value"].as_f64().unwrap()).abs() <= 2e-4);
}

#[test]
fn decompose_single_context_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cmdp = write(
        dir.path(),
        "one.json",
        r#"{"states": ["s", "t"], "actions": ["x", "y"], "gamma": 0.8, "initial_states": ["s"],
            "context_prior": [1.0],
            "contexts": [{"name": "only",
              "transitions": [{"state": "s", "action": "x", "next": {"t": 1.0}},
                              {"state": "s", "action": "y", "next": {"s": 0.5, "t": 0.5}},
                              {"state": "t", "action": "x", "next": {"s": 1.0}},
                              {"state": "t", "action": "y", "next": {"t": 1.0}}],
              "rewards": [{"state": "s", "action": "x", "value": 1.0},
                          {"state": "s", "action": "y", "value": 0.0},
                          {"state": "t", "action": "x", "value": 0.0},
                          {"state": "t", "action": "y", "value": 0.5}]}]}"#,
    );
    let recs = jsonl(&stdout(&kmem(&["decompose", "--cmdp", &cmdp, "--roundtrip", "--format", "jsonl"])));
    assert!(recs[0]["gap"].as_f64().unwrap() <= 2e-4, "{}", recs[0]);
}

#[test]
fn qlearn_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let run = |p: &Path| {
        stdout(&kmem(&[
            "qlearn", "--seeds", "7", "--episodes", "300", "--curve", &p.to_string_lossy(), "--curve-every", "1",
            "--format", "csv",
        ]))
    };
    assert_eq!(run(&a), run(&b));
    let curve = std::fs::read_to_string(&a).unwrap();
    assert_eq!(curve, std::fs::read_to_string(&b).unwrap());
    assert_eq!(curve.lines().count(), 301);
}

#[test]
fn nf_requires_d0_and_finds_defection() {
    let recs = jsonl(&stdout(&kmem(&[
        "nf", "--support0", "all-c;all-d", "--support1", "all-c;all-d", "--d0", "1", "--format", "jsonl",
    ])));
    let weight = |agent: u64, s: &str| {
        recs.iter()
            .find(|r| r["agent"] == agent && r["strategy"] == s)
            .unwrap()["weight"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(weight(0, "all-d"), 1.0);
    assert_eq!(weight(1, "all-d"), 1.0);
    assert!(!kmem(&["nf", "--support0", "all-c", "--support1", "all-c"]).status.success());
}
