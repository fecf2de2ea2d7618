use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gin::experiment::{
    self, baselines, evaluate, generate, load_generated, missing_fraction_sweep, read_matrix_csv, sweep_slope,
    train_model, write_generated, write_sweep_csv, ExperimentConfig, TrainedModel,
};
use gin::graph::{load_edge_list, NodePartition};
use gin::matching::{match_with_restarts, MatchProblem};
use gin::train::Task;
use gin::GinError;

#[derive(Parser)]
#[command(name = "gin", version, about = "Infer missing network structure and hidden initial states from node time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON). Defaults to <out>/config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the task: complete-partial, complete-blind or reconstruct.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the graph, partition, trajectories and split.
    Generate(Common),
    /// Train a model on generated data.
    Train(Common),
    /// Match (unless --no-match) and score a trained model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_match: bool,
    },
    /// Seeded graph matching of two networks over the hidden nodes.
    Match {
        /// Reference network: edge list or n x n CSV matrix.
        #[arg(long)]
        a: PathBuf,
        /// Network to align: edge list or n x n CSV matrix.
        #[arg(long)]
        b: PathBuf,
        /// Partition JSON naming the hidden nodes.
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the result here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mutual-information and partial-correlation baselines.
    Baseline(Common),
    /// Train and evaluate once per hidden fraction.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated hidden fractions in (0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
    },
    /// Generate, train, evaluate with and without matching, and run baselines.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &GinError) -> u8 {
    match e {
        GinError::Config(_) | GinError::Parameter(_) | GinError::Parse { .. } | GinError::Serde(_) => 2,
        GinError::Io { .. } => 3,
        GinError::Numeric(_) | GinError::ZeroVariance(_) | GinError::UndefinedAuc => 4,
        _ => 1,
    }
}

/// Loads the configuration, applies flag overrides and records the result
/// in the output directory.
fn resolve(c: &Common) -> gin::Result<ExperimentConfig> {
    let path = c.config.clone().unwrap_or_else(|| c.out.join(experiment::CONFIG_FILE));
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.task {
        cfg.train.task = t;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&c.out).map_err(|e| GinError::io(&c.out, e))?;
    cfg.save(c.out.join(experiment::CONFIG_FILE))?;
    Ok(cfg)
}

fn threads() -> usize {
    std::env::var("GIN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_generate(c: &Common) -> gin::Result<()> {
    let cfg = resolve(c)?;
    let g = generate(&cfg)?;
    write_generated(&g, &cfg, &c.out)?;
    print_json(&serde_json::json!({"windows": g.dataset.len(), "edges": g.graph.edge_count(), "hidden": g.partition.hidden()}));
    Ok(())
}

fn cmd_train(c: &Common) -> gin::Result<()> {
    let cfg = resolve(c)?;
    let g = load_generated(&cfg, &c.out)?;
    let model = train_model(&cfg, &g)?;
    model.save(&c.out, cfg.seed)?;
    let last: Vec<_> = model
        .logs
        .iter()
        .map(|(name, log)| serde_json::json!({"stage": name, "epochs": log.len(), "final_loss": log.train_losses().last()}))
        .collect();
    print_json(&serde_json::Value::Array(last));
    Ok(())
}

fn cmd_evaluate(c: &Common, no_match: bool) -> gin::Result<()> {
    let cfg = resolve(c)?;
    let g = load_generated(&cfg, &c.out)?;
    let model = TrainedModel::load(&c.out, cfg.train.task)?;
    let ev = evaluate(&cfg, &g, &model, !no_match)?;
    ev.save(&c.out)?;
    print_json(&serde_json::to_value(&ev.report)?);
    Ok(())
}

fn cmd_match(a: &Path, b: &Path, partition: &Path, seed: u64, out: Option<&Path>) -> gin::Result<()> {
    let p = NodePartition::load(partition)?;
    let load = |path: &Path| -> gin::Result<_> {
        match read_matrix_csv(path) {
            Ok(m) if m.nrows() == p.n() => Ok(m),
            _ => Ok(load_edge_list(path, Some(p.n()))?.adjacency().clone()),
        }
    };
    let a = load(a)?;
    let b = load(b)?;
    let problem = MatchProblem::from_partition(a, b, &p)?;
    let res = match_with_restarts(&problem, 100, 1e-6, 3, seed)?;
    let v = serde_json::json!({
        "hidden": res.hidden,
        "permutation": res.permutation,
        "objective": res.objective,
        "converged": res.converged,
    });
    match out {
        Some(path) => experiment::save_json(&v, path)?,
        None => print_json(&v),
    }
    Ok(())
}

fn cmd_baseline(c: &Common) -> gin::Result<()> {
    let cfg = resolve(c)?;
    let g = load_generated(&cfg, &c.out)?;
    let report = baselines(&g)?;
    experiment::save_json(&report, c.out.join(experiment::BASELINE_FILE))?;
    print_json(&serde_json::to_value(&report)?);
    Ok(())
}

fn cmd_sweep(c: &Common, fractions: &[f64]) -> gin::Result<()> {
    let cfg = resolve(c)?;
    let rows = missing_fraction_sweep(&cfg, fractions, threads())?;
    write_sweep_csv(&rows, c.out.join(experiment::SWEEP_FILE))?;
    print_json(&serde_json::json!({"rows": rows, "slope": sweep_slope(&rows).ok()}));
    Ok(())
}

fn cmd_run_all(c: &Common) -> gin::Result<()> {
    let cfg = resolve(c)?;
    let g = generate(&cfg)?;
    write_generated(&g, &cfg, &c.out)?;
    let g = load_generated(&cfg, &c.out)?;
    let model = train_model(&cfg, &g)?;
    model.save(&c.out, cfg.seed)?;
    let unmatched = evaluate(&cfg, &g, &model, false)?;
    unmatched.save(&c.out.join("unmatched"))?;
    let matched = evaluate(&cfg, &g, &model, true)?;
    matched.save(&c.out)?;
    let base = baselines(&g)?;
    experiment::save_json(&base, c.out.join(experiment::BASELINE_FILE))?;
    print_json(&serde_json::json!({
        "auc": matched.report.unobs_auc,
        "auc_without_matching": unmatched.report.unobs_auc,
        "obs_state_score": matched.report.obs_state_score,
        "baselines": base,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Train(c) => cmd_train(c),
        Command::Evaluate { common, no_match } => cmd_evaluate(common, *no_match),
        Command::Match {
            a,
            b,
            partition,
            seed,
            out,
        } => cmd_match(a, b, partition, *seed, out.as_deref()),
        Command::Baseline(c) => cmd_baseline(c),
        Command::Sweep { common, fractions } => cmd_sweep(common, fractions),
        Command::RunAll { common } => cmd_run_all(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
