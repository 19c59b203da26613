use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use kmem::cmdp::{cmdp_to_sg, decompose as decompose_matrix, roundtrip_check, Decomposition, DEFAULT_RANK_TOLERANCE};
use kmem::domains::phase::{best_response_pattern, PhasePoint};
use kmem::domains::qlearn::{rollout_return, tabular_q_learning, CurvePoint, QLearningConfig};
use kmem::game::{game_space, StochasticGame};
use kmem::mdp::best_response;
use kmem::mixed::{eval_vs_behavioral, eval_vs_mixed, induce_behavioral, MixedStrategy};
use kmem::nash::{find_ne, random_profile_tables, NeOptions, NeResult};
use kmem::normal_form::{find_mixed_ne_2p, reduced_normal_form};
use kmem::pomdp::{belief_trace, build_br_pomdp, solve_br_pomdp, solve_br_pomdp_horizon, DEFAULT_NODE_CAP};
use kmem::report::{best_response_table, strategy_table};
use kmem::spec::{from_json, load_cmdp, load_mixed_instance, load_mixture, GameFile, MixtureFile};
use kmem::strategy::{joint_opponent, KMemoryStrategy};

use crate::input::{self, parse_list, GameArgs};
use crate::output::{columns, write_records, FormatArg, Sink};

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `job` on every item with up to `threads` workers and returns the
/// results in item order.
fn fan_out<T: Sync, R: Send>(items: &[T], threads: usize, job: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = job(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item is processed"))
        .collect()
}

fn joint_label(game: &StochasticGame, s: &KMemoryStrategy) -> String {
    s.agents().iter().map(|&i| game.agents()[i].clone()).collect::<Vec<_>>().join("+")
}

#[derive(Args, Debug)]
pub struct BrArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Builtin strategy name or strategy file, applied to every opponent.
    #[arg(long)]
    pub opponent: String,
    #[arg(long, default_value_t = 0)]
    pub agent: usize,
    /// Value-iteration tolerance on the value error.
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
}

pub fn br(args: &BrArgs, sink: &mut Sink) -> Result<()> {
    let game = args.game.build()?;
    let opp = input::opponents(&game, args.agent, &args.opponent)?;
    let result = best_response(&game, args.agent, &opp, args.epsilon)?;
    let table = best_response_table(&game, &result, &opp, &args.opponent)?;
    sink.push(&table.render(sink.format.into())?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct NeArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Memory K of every agent.
    #[arg(long, short = 'k', default_value_t = 0)]
    pub memory: usize,
    /// Number of starting profiles: the uniform one, then seeded random ones.
    #[arg(long, default_value_t = 1)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = NeOptions::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = NeOptions::default().epsilon_fix)]
    pub epsilon_fix: f64,
    #[arg(long, default_value_t = NeOptions::default().epsilon_ne)]
    pub epsilon_ne: f64,
    #[arg(long, default_value_t = NeOptions::default().damping)]
    pub damping: f64,
    #[arg(long, default_value_t = default_threads())]
    pub threads: usize,
    /// Write the residual trace of every start here (CSV, or JSON lines for `.jsonl`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct NeRecord {
    start: usize,
    converged: bool,
    iterations: usize,
    fixed_point_residual: f64,
    is_ne: bool,
    max_exploitability: f64,
    exploitability: String,
    purification: String,
}

#[derive(Serialize)]
struct TraceRecord {
    start: usize,
    iteration: usize,
    residual: f64,
}

fn start_profile(game: &StochasticGame, k: usize, start: usize, seed: u64) -> Result<Vec<KMemoryStrategy>> {
    let n = game.n_agents();
    if start == 0 {
        return Ok((0..n).map(|i| KMemoryStrategy::uniform(i, game.n_actions(i))).collect());
    }
    let space = game_space(game, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(start as u64));
    let tables = random_profile_tables(game, &space, &mut rng);
    tables
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            let rows = space.states().iter().cloned().zip(rows);
            Ok(KMemoryStrategy::from_table(i, k, game.n_actions(i), rows)?)
        })
        .collect()
}

pub fn ne(args: &NeArgs, sink: &mut Sink) -> Result<()> {
    let game = args.game.build()?;
    let options = NeOptions {
        max_iters: args.max_iters,
        epsilon_fix: args.epsilon_fix,
        epsilon_ne: args.epsilon_ne,
        damping: args.damping,
        ..NeOptions::default()
    };
    let starts: Vec<usize> = (0..args.starts.max(1)).collect();
    let runs: Vec<NeResult> = fan_out(&starts, args.threads, |&start| {
        let init = start_profile(&game, args.memory, start, args.seed)?;
        Ok(find_ne(&game, args.memory, &init, &options)?)
    })?;

    let records: Vec<NeRecord> = runs
        .iter()
        .enumerate()
        .map(|(start, r)| {
            let c = &r.certificate;
            NeRecord {
                start,
                converged: c.converged,
                iterations: c.iterations,
                fixed_point_residual: c.fixed_point_residual,
                is_ne: c.is_ne,
                max_exploitability: c.max_exploitability,
                exploitability: c.exploitability.iter().map(|e| format!("{e:e}")).collect::<Vec<_>>().join(" "),
                purification: format!("{:?}", c.purification).to_lowercase(),
            }
        })
        .collect();
    if let Some(path) = &args.trace {
        let trace: Vec<TraceRecord> = runs
            .iter()
            .enumerate()
            .flat_map(|(start, r)| {
                r.trace.iter().map(move |p| TraceRecord {
                    start,
                    iteration: p.iteration,
                    residual: p.residual,
                })
            })
            .collect();
        write_records(path, &trace)?;
    }

    let best = runs
        .iter()
        .position(|r| r.certificate.is_ne)
        .unwrap_or_else(|| {
            (0..runs.len())
                .min_by(|&a, &b| {
                    runs[a]
                        .certificate
                        .max_exploitability
                        .total_cmp(&runs[b].certificate.max_exploitability)
                })
                .expect("at least one start")
        });
    let tables = if sink.format == FormatArg::Table {
        let profile = &runs[best].profile;
        let mut text = Vec::new();
        for i in 0..game.n_agents() {
            let others: Vec<KMemoryStrategy> = (0..game.n_agents())
                .filter(|&j| j != i)
                .map(|j| profile.strategies[j].clone())
                .collect();
            let opp = joint_opponent(&game, i, &others)?;
            let title = format!(
                "NE (start {best}, K = {}), {} val = {:.2}",
                args.memory,
                game.agents()[i],
                profile.root_values()[i][0]
            );
            let t = strategy_table(&game, i, &profile.strategies[i], &opp, profile.space(), &profile.values[i], &title)?;
            text.push(t.render_text());
        }
        text.join("\n")
    } else {
        String::new()
    };
    sink.records(&records, |recs| {
        let rows: Vec<Vec<String>> = recs
            .iter()
            .map(|r| {
                vec![
                    r.start.to_string(),
                    r.converged.to_string(),
                    r.iterations.to_string(),
                    format!("{:.3e}", r.fixed_point_residual),
                    r.is_ne.to_string(),
                    format!("{:.3e}", r.max_exploitability),
                    r.purification.clone(),
                ]
            })
            .collect();
        let header = ["start", "converged", "iterations", "residual", "is_ne", "exploitability", "certified"];
        format!("{}\n\n{tables}", columns(&header, &rows))
    })
}

#[derive(Args, Debug)]
pub struct MixedArgs {
    /// A mixed-instance file bundling game, agent, mixture and (optionally) a strategy.
    #[arg(long, conflicts_with = "mixture")]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub game: GameArgs,
    /// Mixture file over the opponents' strategies.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub agent: usize,
    /// Own strategy to evaluate (builtin name or file).
    #[arg(long)]
    pub strategy: Option<String>,
    /// Policy-evaluation tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
    /// Value tolerance of the belief planner; sets its horizon.
    #[arg(long, default_value_t = 1e-3)]
    pub pomdp_epsilon: f64,
    /// Plan to exactly this horizon instead.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Write a belief trace against support member `--trace-type` here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub trace_type: usize,
    #[arg(long, default_value_t = 10)]
    pub trace_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct MixedRecord {
    agent: usize,
    support: usize,
    v_mix: Option<f64>,
    v_beh: Option<f64>,
    utility_gap: Option<f64>,
    constant_memory_br: f64,
    planner: f64,
    horizon: usize,
    belief_nodes: usize,
}

pub fn mixed(args: &MixedArgs, sink: &mut Sink) -> Result<()> {
    let (game, agent, mixture, own): (StochasticGame, usize, MixedStrategy, Option<KMemoryStrategy>) =
        match &args.instance {
            Some(path) => {
                let inst = load_mixed_instance(path).with_context(|| format!("reading {}", path.display()))?;
                let own = match &args.strategy {
                    Some(name) => Some(input::strategy(&inst.game, inst.agent, name)?),
                    None => inst.strategy,
                };
                (inst.game, inst.agent, inst.mixture, own)
            }
            None => {
                let Some(path) = &args.mixture else {
                    bail!("either --instance or --mixture is required");
                };
                let game = args.game.build()?;
                let mixture = load_mixture(&game, path).with_context(|| format!("reading {}", path.display()))?;
                let own = match &args.strategy {
                    Some(name) => Some(input::strategy(&game, args.agent, name)?),
                    None => None,
                };
                (game, args.agent, mixture, own)
            }
        };

    let (v_mix, v_beh) = match &own {
        Some(s) => (
            Some(eval_vs_mixed(&game, agent, s, &mixture, args.epsilon)?[0]),
            Some(eval_vs_behavioral(&game, agent, s, &mixture, args.epsilon)?[0]),
        ),
        None => (None, None),
    };
    let omega = induce_behavioral(&mixture)?;
    let constant = best_response(&game, agent, &omega, args.epsilon)?;
    let constant_value = eval_vs_mixed(&game, agent, &constant.strategy, &mixture, args.epsilon)?[0];
    let pomdp = build_br_pomdp(&game, agent, &mixture)?;
    let solution = match args.horizon {
        Some(h) => solve_br_pomdp_horizon(&pomdp, h, DEFAULT_NODE_CAP)?,
        None => solve_br_pomdp(&pomdp, args.pomdp_epsilon)?,
    };
    if let Some(path) = &args.trace {
        let trace = belief_trace(&pomdp, &solution, args.trace_type, 0, args.trace_steps, args.seed)?;
        #[derive(Serialize)]
        struct Row {
            step: usize,
            observation: String,
            action: String,
            posterior: String,
        }
        let space = pomdp.space().cloned();
        let rows: Vec<Row> = trace
            .iter()
            .map(|r| Row {
                step: r.step,
                observation: match &space {
                    Some(s) => game.aug_label(s.get(r.observation)),
                    None => r.observation.to_string(),
                },
                action: game.actions(agent)[r.action].clone(),
                posterior: r.posterior.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(" "),
            })
            .collect();
        write_records(path, &rows)?;
    }
    let record = MixedRecord {
        agent,
        support: mixture.len(),
        v_mix,
        v_beh,
        utility_gap: v_mix.zip(v_beh).map(|(a, b)| (a - b).abs()),
        constant_memory_br: constant_value,
        planner: solution.root_values[0],
        horizon: solution.horizon,
        belief_nodes: solution.nodes,
    };
    sink.records(&[record], |recs| {
        let r = &recs[0];
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        let rows = vec![
            vec!["agent".into(), r.agent.to_string()],
            vec!["support size".into(), r.support.to_string()],
            vec!["V_mix".into(), opt(r.v_mix)],
            vec!["V_beh".into(), opt(r.v_beh)],
            vec!["utility gap".into(), opt(r.utility_gap)],
            vec!["constant-memory BR vs mixture".into(), format!("{:.6}", r.constant_memory_br)],
            vec!["belief planner".into(), format!("{:.6}", r.planner)],
            vec!["planner horizon".into(), r.horizon.to_string()],
            vec!["belief nodes".into(), r.belief_nodes.to_string()],
        ];
        columns(&["quantity", "value"], &rows)
    })
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// CMDP file; each state's stacked context rows are decomposed.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    pub cmdp: Option<PathBuf>,
    /// JSON array of matrix rows to decompose directly.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RANK_TOLERANCE)]
    pub tolerance: f64,
    /// Compare the CMDP optimum with the best response in the reduced game.
    #[arg(long, requires = "cmdp")]
    pub roundtrip: bool,
    /// Value tolerance of the round trip.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Write the reduced game here as a game file.
    #[arg(long, requires = "cmdp")]
    pub game_out: Option<PathBuf>,
    /// Write the context mixture over the reduced game here.
    #[arg(long, requires = "cmdp")]
    pub mixture_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DecompositionRecord {
    state: String,
    rank: usize,
    residual: f64,
    reconstruction_exact: bool,
    row_stochastic_basis: bool,
    row_stochastic_coefficients: bool,
    basis: String,
    coefficients: String,
}

fn decomposition_record(state: &str, d: &Decomposition) -> Result<DecompositionRecord> {
    Ok(DecompositionRecord {
        state: state.to_string(),
        rank: d.rank,
        residual: d.residual,
        reconstruction_exact: d.validity.reconstruction_exact,
        row_stochastic_basis: d.validity.row_stochastic_basis,
        row_stochastic_coefficients: d.validity.row_stochastic_coefficients,
        basis: serde_json::to_string(&d.basis)?,
        coefficients: serde_json::to_string(&d.coefficients)?,
    })
}

fn matrix_text(m: &[Vec<f64>]) -> String {
    m.iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:>9.4}")).collect();
            format!("  [{}]", cells.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn decomposition_text(recs: &[DecompositionRecord], decs: &[Decomposition]) -> String {
    recs.iter()
        .zip(decs)
        .map(|(r, d)| {
            format!(
                "state {}: rank {}, residual {:.3e}, exact {}, stochastic basis {}, stochastic coefficients {}\nM_T (basis)\n{}\nM_Pi (coefficients)\n{}",
                r.state,
                r.rank,
                r.residual,
                r.reconstruction_exact,
                r.row_stochastic_basis,
                r.row_stochastic_coefficients,
                matrix_text(&d.basis),
                matrix_text(&d.coefficients)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn decompose(args: &DecomposeArgs, sink: &mut Sink) -> Result<()> {
    if let Some(path) = &args.matrix {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Vec<Vec<f64>> = from_json(&text)?;
        let d = decompose_matrix(&m, args.tolerance)?;
        let recs = vec![decomposition_record("-", &d)?];
        let decs = [d];
        return sink.records(&recs, |r| decomposition_text(r, &decs));
    }
    let path = args.cmdp.as_ref().expect("clap enforces --cmdp or --matrix");
    let cmdp = load_cmdp(path).with_context(|| format!("reading {}", path.display()))?;
    let reduction = cmdp_to_sg(&cmdp, args.tolerance)?;
    if let (Some(out), Some(game)) = (&args.game_out, &reduction.game) {
        std::fs::write(out, serde_json::to_string_pretty(&GameFile::from_game(game))? + "\n")?;
    }
    if let (Some(out), Some(game), Some(mixture)) = (&args.mixture_out, &reduction.game, &reduction.mixture) {
        let file = MixtureFile::from_mixture(game, mixture, cmdp.contexts())?;
        std::fs::write(out, serde_json::to_string_pretty(&file)? + "\n")?;
    }
    if (args.game_out.is_some() || args.mixture_out.is_some()) && reduction.game.is_none() {
        eprintln!("warning: the decomposition is not stochastic, so no game was written");
    }
    let recs = cmdp
        .states()
        .iter()
        .zip(&reduction.per_state)
        .map(|(s, d)| decomposition_record(s, d))
        .collect::<Result<Vec<_>>>()?;

    if args.roundtrip {
        let rt = roundtrip_check(&cmdp, args.epsilon)?;
        #[derive(Serialize)]
        struct RoundTripRecord {
            cmdp_value: f64,
            game_br_value: Option<f64>,
            gap: Option<f64>,
            report_only: bool,
            synthetic_actions: usize,
        }
        let rec = RoundTripRecord {
            cmdp_value: rt.cmdp_value[0],
            game_br_value: rt.sg_br_value.as_ref().map(|v| v[0]),
            gap: (!rt.report_only).then_some(rt.gap),
            report_only: rt.report_only,
            synthetic_actions: reduction.n_synthetic,
        };
        let detail = decomposition_text(&recs, &reduction.per_state);
        return sink.records(&[rec], |r| {
            let r = &r[0];
            let game_value = r.game_br_value.map_or("-".into(), |v| format!("{v:.6}"));
            let gap = r.gap.map_or("- (report only)".into(), |g| format!("{g:.3e}"));
            format!(
                "{detail}\n\nround trip: CMDP value {:.6}, reduced-game BR value {game_value}, gap {gap}",
                r.cmdp_value
            )
        });
    }
    sink.records(&recs, |r| {
        format!(
            "{}\n\nsynthetic actions: {}",
            decomposition_text(r, &reduction.per_state),
            reduction.n_synthetic
        )
    })
}

#[derive(Args, Debug)]
pub struct PhaseArgs {
    /// Prisoner's dilemma payoffs as `T,R,P,S`.
    #[arg(long, default_value = "2,1,0,-1")]
    pub payoffs: String,
    #[arg(long, default_value_t = 3)]
    pub n_max: usize,
    #[arg(long, default_value_t = 3)]
    pub m_max: usize,
    /// Explicit discount list; otherwise an even grid of `--gamma-steps` points in (0, 1).
    #[arg(long)]
    pub gammas: Option<String>,
    #[arg(long, default_value_t = 19)]
    pub gamma_steps: usize,
    /// Evaluate only at γ*(M) minus and plus this offset.
    #[arg(long, conflicts_with = "gammas")]
    pub offset: Option<f64>,
    /// On-path rounds used to classify the pattern.
    #[arg(long, default_value_t = 36)]
    pub rounds: usize,
    #[arg(long, default_value_t = default_threads())]
    pub threads: usize,
}

pub fn phase(args: &PhaseArgs, sink: &mut Sink) -> Result<()> {
    let payoffs = input::payoffs(&args.payoffs)?;
    let mut cells = Vec::new();
    for m in 1..=args.m_max {
        let star = kmem::domains::phase::phase_transition_gamma(m as u32, &payoffs)?;
        let gammas: Vec<f64> = match (&args.gammas, args.offset) {
            (Some(list), _) => parse_list(list, "--gammas")?,
            (None, Some(d)) => vec![star - d, star + d],
            (None, None) => (1..=args.gamma_steps)
                .map(|i| i as f64 / (args.gamma_steps + 1) as f64)
                .collect(),
        };
        for n in 1..=args.n_max {
            for &g in &gammas {
                if !(g > 0.0 && g < 1.0) {
                    bail!("discount {g} is outside (0, 1)");
                }
                cells.push((n, m, g));
            }
        }
    }
    let points: Vec<PhasePoint> = fan_out(&cells, args.threads, |&(n, m, g)| {
        Ok(best_response_pattern(&payoffs, n, m, g, args.rounds)?)
    })?;
    sink.records(&points, |pts| {
        let rows: Vec<Vec<String>> = pts
            .iter()
            .map(|p| {
                vec![
                    p.n.to_string(),
                    p.m.to_string(),
                    format!("{:.6}", p.gamma_star),
                    format!("{:.4}", p.gamma),
                    p.pattern.to_string(),
                    format!("{:.4}", p.value),
                ]
            })
            .collect();
        columns(&["N", "M", "gamma*", "gamma", "pattern", "BR value"], &rows)
    })
}

#[derive(Args, Debug)]
pub struct QlearnArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Builtin strategy name or strategy file for the opponent(s).
    #[arg(long, default_value = "ntfmt-spirit:1,5")]
    pub opponent: String,
    #[arg(long, default_value_t = 0)]
    pub agent: usize,
    /// Memory k′ of the learner.
    #[arg(long, short = 'k', default_value_t = 3)]
    pub memory: usize,
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long, default_value_t = QLearningConfig::default().episodes)]
    pub episodes: usize,
    #[arg(long, default_value_t = QLearningConfig::default().episode_length)]
    pub episode_length: usize,
    #[arg(long, default_value_t = QLearningConfig::default().learn_rate)]
    pub learn_rate: f64,
    /// Discount used by the Q-update.
    #[arg(long, default_value_t = QLearningConfig::default().discount)]
    pub discount: f64,
    /// Rounds of the greedy rollout.
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    /// Discount of the greedy rollout (1 for a plain total).
    #[arg(long, default_value_t = 1.0)]
    pub rollout_discount: f64,
    /// Write every seed's learning curve here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Keep every this many curve points.
    #[arg(long, default_value_t = 100)]
    pub curve_every: usize,
    #[arg(long, default_value_t = default_threads())]
    pub threads: usize,
}

#[derive(Serialize)]
struct QlearnRecord {
    seed: u64,
    q_states: usize,
    rollout: f64,
}

#[derive(Serialize)]
struct CurveRecord {
    seed: u64,
    episode: usize,
    episode_return: f64,
}

pub fn qlearn(args: &QlearnArgs, sink: &mut Sink) -> Result<()> {
    let game = args.game.build_or("itd")?;
    let opp = input::opponents(&game, args.agent, &args.opponent)?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "--seeds")?;
    let start = game.initial_states()[0];
    let runs: Vec<(QlearnRecord, Vec<CurvePoint>)> = fan_out(&seeds, args.threads, |&seed| {
        let config = QLearningConfig {
            episodes: args.episodes,
            episode_length: args.episode_length,
            learn_rate: args.learn_rate,
            discount: args.discount,
            seed,
            ..QLearningConfig::default()
        };
        let result = tabular_q_learning(&game, args.agent, &opp, args.memory, &config)?;
        let rollout = rollout_return(&game, args.agent, &result.policy, &opp, start, args.rounds, args.rollout_discount)?;
        Ok((
            QlearnRecord {
                seed,
                q_states: result.q.len(),
                rollout,
            },
            result.curve,
        ))
    })?;
    if let Some(path) = &args.curve {
        let every = args.curve_every.max(1);
        let curve: Vec<CurveRecord> = runs
            .iter()
            .flat_map(|(r, c)| {
                c.iter()
                    .filter(move |p| p.episode % every == 0)
                    .map(move |p| CurveRecord {
                        seed: r.seed,
                        episode: p.episode,
                        episode_return: p.episode_return,
                    })
            })
            .collect();
        write_records(path, &curve)?;
    }
    let records: Vec<QlearnRecord> = runs.into_iter().map(|(r, _)| r).collect();
    let who = joint_label(&game, &opp);
    sink.records(&records, |recs| {
        let rows: Vec<Vec<String>> = recs
            .iter()
            .map(|r| vec![r.seed.to_string(), r.q_states.to_string(), format!("{}", r.rollout)])
            .collect();
        format!(
            "k' = {} against {} ({who}), {}-round greedy rollout\n{}",
            args.memory,
            args.opponent,
            args.rounds,
            columns(&["seed", "Q states", "rollout"], &rows)
        )
    })
}

#[derive(Args, Debug)]
pub struct NfArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Support of agent 0: comma-separated builtin names or strategy files.
    #[arg(long)]
    pub support0: String,
    /// Support of agent 1.
    #[arg(long)]
    pub support1: String,
    /// Initial-state distribution, one weight per state.
    #[arg(long)]
    pub d0: String,
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
}

#[derive(Serialize)]
struct NfRecord {
    agent: usize,
    strategy: String,
    weight: f64,
    equilibrium_value: f64,
}

pub fn nf(args: &NfArgs, sink: &mut Sink) -> Result<()> {
    let game = args.game.build()?;
    if game.n_agents() != 2 {
        bail!("normal-form reduction is available for two-agent games");
    }
    // `;` separates entries so that builtin names with commas survive.
    let names: Vec<Vec<String>> = [&args.support0, &args.support1]
        .iter()
        .map(|s| s.split(';').map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect())
        .collect();
    let supports = names
        .iter()
        .enumerate()
        .map(|(i, ns)| ns.iter().map(|n| input::strategy(&game, i, n)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let d0: Vec<f64> = parse_list(&args.d0, "--d0")?;
    let tensor = reduced_normal_form(&game, &supports, &d0, args.epsilon)?;
    let eq = find_mixed_ne_2p(&tensor)?;
    let records: Vec<NfRecord> = (0..2)
        .flat_map(|i| {
            let eq = &eq;
            names[i].iter().enumerate().map(move |(k, n)| NfRecord {
                agent: i,
                strategy: n.clone(),
                weight: eq.weights[i][k],
                equilibrium_value: eq.values[i],
            })
        })
        .collect();
    sink.records(&records, |recs| {
        let rows: Vec<Vec<String>> = (0..tensor.shape[0])
            .map(|a| {
                let mut row = vec![names[0][a].clone()];
                row.extend((0..tensor.shape[1]).map(|b| {
                    format!("{:.4}, {:.4}", tensor.payoff(&[a, b], 0), tensor.payoff(&[a, b], 1))
                }));
                row
            })
            .collect();
        let mut header: Vec<&str> = vec![""];
        header.extend(names[1].iter().map(String::as_str));
        let weights: Vec<Vec<String>> = recs
            .iter()
            .map(|r| vec![r.agent.to_string(), r.strategy.clone(), format!("{:.6}", r.weight)])
            .collect();
        format!(
            "{}\n\nequilibrium values {:.6}, {:.6}\n{}",
            columns(&header, &rows),
            eq.values[0],
            eq.values[1],
            columns(&["agent", "strategy", "weight"], &weights)
        )
    })
}
