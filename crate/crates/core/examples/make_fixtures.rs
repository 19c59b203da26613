//! Regenerates the committed fixtures under `tests/fixtures/`.
//!
//! ```text
//! cargo run -p kmem --example make_fixtures
//! ```
//!
//! The mixed-strategy witness comes from a seeded random search, so the
//! output is reproducible but not hand-tuned.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kmem::cmdp::{cmdp_to_sg, Cmdp, CmdpParts};
use kmem::domains::ipd::{make_ipd, PdPayoffs};
use kmem::domains::strategies::tit_for_tat;
use kmem::game::{game_space, GameParts, StochasticGame};
use kmem::mdp::best_response;
use kmem::mixed::{eval_vs_mixed, utility_gap, MixedStrategy};
use kmem::pomdp::{build_br_pomdp, solve_br_pomdp};
use kmem::spec::{random_strategy, AgentRef, CmdpFile, GameFile, MixedInstanceFile, MixtureFile, StrategyFile};
use kmem::strategy::KMemoryStrategy;

const SEARCH_SEED: u64 = 20_240_501;
const MIN_GAP: f64 = 0.05;
const MIN_PLANNER_MARGIN: f64 = 0.01;

fn random_game(rng: &mut ChaCha8Rng) -> kmem::Result<StochasticGame> {
    let n = 2;
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..n {
        let mut t = Vec::new();
        let mut r = Vec::new();
        for _ in 0..4 {
            let p = grid[rng.gen_range(0..grid.len())];
            t.push(vec![(0, p), (1, 1.0 - p)]);
            r.push(vec![rng.gen_range(-2..=3) as f64, rng.gen_range(-2..=3) as f64]);
        }
        transitions.push(t);
        rewards.push(r);
    }
    StochasticGame::new(GameParts {
        agents: vec!["p1".into(), "p2".into()],
        states: vec!["s0".into(), "s1".into()],
        actions: vec![vec!["a".into(), "b".into()], vec!["a".into(), "b".into()]],
        transitions,
        rewards,
        gamma: 0.9,
        initial_states: vec![0],
    })
}

struct Witness {
    game: StochasticGame,
    mixture: MixedStrategy,
    own: KMemoryStrategy,
    gap: f64,
    planner: f64,
    constant: f64,
    trial: usize,
}

fn search_witness() -> kmem::Result<Witness> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEARCH_SEED);
    for trial in 0.. {
        let game = random_game(&mut rng)?;
        let support = vec![
            random_strategy(&game, 1, 1, rng.gen(), true)?,
            random_strategy(&game, 1, 1, rng.gen(), true)?,
        ];
        let w = rng.gen_range(20..=80) as f64 / 100.0;
        let mixture = MixedStrategy::new(support, vec![w, 1.0 - w])?;
        let own = random_strategy(&game, 0, 1, rng.gen(), true)?;
        let gap = utility_gap(&game, 0, &own, &mixture, 1e-12)?;
        if gap <= MIN_GAP {
            continue;
        }
        let omega = kmem::mixed::induce_behavioral(&mixture)?;
        let br = best_response(&game, 0, &omega, 1e-12)?;
        let constant = eval_vs_mixed(&game, 0, &br.strategy, &mixture, 1e-12)?[0];
        let planner = solve_br_pomdp(&build_br_pomdp(&game, 0, &mixture)?, 1e-9)?.root_values[0];
        if planner > constant + MIN_PLANNER_MARGIN {
            return Ok(Witness {
                game,
                mixture,
                own,
                gap,
                planner,
                constant,
                trial,
            });
        }
    }
    unreachable!()
}

fn instance_file(
    game: &StochasticGame,
    mixture: &MixedStrategy,
    own: Option<&KMemoryStrategy>,
    notes: BTreeMap<String, String>,
) -> kmem::Result<MixedInstanceFile> {
    let names: Vec<String> = (0..mixture.len()).map(|i| format!("type{i}")).collect();
    let strategy = match own {
        Some(s) => {
            let space = game_space(game, s.memory())?;
            Some(StrategyFile::from_strategy(game, s, &space)?)
        }
        None => None,
    };
    Ok(MixedInstanceFile {
        game: GameFile::from_game(game),
        agent: AgentRef::Index(0),
        mixture: MixtureFile::from_mixture(game, mixture, &names)?,
        strategy,
        notes,
    })
}

fn tiny_instance() -> kmem::Result<MixedInstanceFile> {
    let game = make_ipd(PdPayoffs::default(), 0.2)?;
    let cautious = random_strategy(&game, 1, 1, 7, false)?;
    let mixture = MixedStrategy::new(vec![tit_for_tat(1), cautious], vec![0.6, 0.4])?;
    let notes = BTreeMap::from([
        ("epsilon".to_string(), "0.05".to_string()),
        ("horizon".to_string(), "3".to_string()),
    ]);
    instance_file(&game, &mixture, None, notes)
}

fn valid_cmdp() -> kmem::Result<Cmdp> {
    let row = |p: f64| vec![(0, p), (1, 1.0 - p)];
    Cmdp::new(CmdpParts {
        contexts: vec!["a".into(), "b".into()],
        states: vec!["s0".into(), "s1".into()],
        actions: vec!["x".into(), "y".into()],
        transitions: vec![
            vec![vec![row(1.0), row(0.75)], vec![row(0.0), row(1.0)]],
            vec![vec![row(0.75), row(0.75)], vec![row(0.0), row(0.75)]],
        ],
        rewards: vec![vec![vec![0.0, -1.0], vec![1.0, 2.0]], vec![vec![-1.0, 1.0], vec![0.0, 0.0]]],
        gamma: 0.9,
        context_prior: vec![0.5, 0.5],
        initial_states: vec![0],
    })
}

fn write(dir: &Path, name: &str, text: String) -> std::io::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir)?;

    let w = search_witness()?;
    println!(
        "witness after {} trials: gap {:.6}, planner {:.6}, constant-memory {:.6}",
        w.trial, w.gap, w.planner, w.constant
    );
    let notes = BTreeMap::from([
        ("search_seed".to_string(), SEARCH_SEED.to_string()),
        ("trial".to_string(), w.trial.to_string()),
    ]);
    let file = instance_file(&w.game, &w.mixture, Some(&w.own), notes)?;
    write(&dir, "mixed_witness.json", serde_json::to_string_pretty(&file)?)?;

    write(&dir, "tiny_two_support.json", serde_json::to_string_pretty(&tiny_instance()?)?)?;

    let cmdp = valid_cmdp()?;
    let reduction = cmdp_to_sg(&cmdp, kmem::cmdp::DEFAULT_RANK_TOLERANCE)?;
    assert!(reduction.validity.all(), "fixture CMDP must decompose stochastically");
    write(&dir, "valid_cmdp.json", serde_json::to_string_pretty(&CmdpFile::from_cmdp(&cmdp))?)?;
    Ok(())
}
