use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pgts_core::harness::{
    self, diagnostics_csv, pg_diagnose, resolve_config, CommandKind, ExecMode, Overrides, RawConfig,
    DEFAULT_DIAGNOSE_GRID,
};
use pgts_core::ingest::{self, PrepConfig, TableSchema};
use pgts_core::pg::PolyaGammaSampler;

#[derive(Debug, Parser)]
#[command(name = "pgts", version, about = "Polya-Gamma Thompson sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run simulated bandit experiments and write regret traces.
    Simulate(ExperimentArgs),
    /// Evaluate a policy offline against a logged event file.
    Replay(ExperimentArgs),
    /// Turn a labelled CSV into a cluster environment bundle.
    PrepDataset(PrepArgs),
    /// Check Polya-Gamma sampler moments and acceptance rate.
    PgDiagnose(DiagnoseArgs),
    /// Write a synthetic uniformly-logged event file.
    GenLog(GenLogArgs),
    /// Write the synthetic labelled table and its schema.
    GenTable(GenTableArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gaussian-sim, mixture-sim, cluster-sim or replay-synthetic.
    #[arg(long)]
    preset: Option<String>,
    /// pg-ts, pg-ts-stream, laplace-ts, glm-ucb or uniform.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    /// Rounds per run (simulate) or valid-event budget (replay).
    #[arg(long)]
    rounds: Option<usize>,
    /// Gibbs sweeps per round for pg-ts.
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "PGTS_OUT_DIR")]
    out: Option<PathBuf>,
    /// Event log to replay.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Environment bundle for cluster simulations.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Run one experiment run at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct PrepArgs {
    /// Input CSV; omit to prepare the built-in synthetic table.
    #[arg(long, requires = "schema")]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output directory for the bundle (and the synthetic table, if used).
    #[arg(long, env = "PGTS_OUT_DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = ingest::DEFAULT_CLUSTERS)]
    clusters: usize,
    #[arg(long, default_value_t = ingest::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = ingest::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    positive_class: Option<String>,
    /// Rows of the synthetic table.
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Comma-separated tilts.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenLogArgs {
    #[arg(long, default_value_t = 5)]
    arms: usize,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 100_000)]
    events: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenTableArgs {
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn experiment(command: CommandKind, args: ExperimentArgs) -> Result<()> {
    let raw = match &args.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    let flags = Overrides {
        preset: args.preset,
        policy: args.policy,
        runs: args.runs,
        rounds: args.rounds,
        burn_in: args.burn_in,
        seed: args.seed,
        out: args.out,
        log: args.log,
        bundle: args.bundle,
    };
    let config = resolve_config(command, raw, &flags)?;
    let mode = if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let summary = harness::run_experiment(&config, mode)?;
    let meta = &summary.metadata;
    let (mean, std) = summary.aggregate.last().copied().unwrap_or((0.0, 0.0));
    let what = match command {
        CommandKind::Simulate => "cumulative regret",
        CommandKind::Replay => "CTR",
    };
    println!(
        "{} on {}: {} runs completed, {} failed; final {what} {mean:.4} (std {std:.4})",
        config.policy.label(),
        config.preset.as_deref().unwrap_or("custom"),
        meta.completed_runs.len(),
        meta.failed_runs.len(),
    );
    for f in &meta.failed_runs {
        eprintln!("run {} failed: {}", f.run, f.error);
    }
    println!("wrote {}", config.out.display());
    Ok(())
}

fn prep(args: PrepArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (csv, schema_path) = match (args.input, args.schema) {
        (Some(csv), Some(schema)) => (csv, schema),
        (None, None) => ingest::write_synthetic_dataset(&args.out, args.rows, args.seed)?,
        _ => bail!("--input and --schema go together"),
    };
    let schema = TableSchema::from_json_file(&schema_path)?;
    let config = PrepConfig {
        clusters: args.clusters,
        batch_size: args.batch_size,
        iterations: args.iterations,
        seed: args.seed,
        positive_class: args.positive_class,
    };
    let bundle = ingest::prepare_dataset(&csv, &schema, &config)?;
    let path = args.out.join("bundle.json");
    bundle.save(&path)?;
    let lo = bundle.rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = bundle.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} rows -> {} arms, rates {lo:.3}..{hi:.3}; wrote {}",
        bundle.metadata.rows,
        bundle.rates.len(),
        path.display()
    );
    if !bundle.metadata.empty_clusters.is_empty() {
        eprintln!("warning: empty clusters {:?} were given rate 0", bundle.metadata.empty_clusters);
    }
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<bool> {
    let grid = args.grid.unwrap_or_else(|| DEFAULT_DIAGNOSE_GRID.to_vec());
    let rows = pg_diagnose(&mut PolyaGammaSampler::new(), &grid, args.draws, args.seed)?;
    println!("{:>6} {:>10} {:>10} {:>8} {:>10}  status", "c", "mean", "oracle", "z", "accept");
    for r in &rows {
        println!(
            "{:>6} {:>10.6} {:>10.6} {:>8.3} {:>10.6}  {}",
            r.c,
            r.mean,
            r.oracle,
            r.z,
            r.acceptance,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = args.out {
        std::fs::write(&path, diagnostics_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(rows.iter().all(|r| r.pass))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(args) => experiment(CommandKind::Simulate, args)?,
        Command::Replay(args) => experiment(CommandKind::Replay, args)?,
        Command::PrepDataset(args) => prep(args)?,
        Command::PgDiagnose(args) => return diagnose(args),
        Command::GenLog(args) => {
            harness::write_synthetic_log(&args.out, args.arms, args.dim, args.events, args.seed)?;
            println!("wrote {}", args.out.display());
        }
        Command::GenTable(args) => {
            let (csv, schema) = ingest::write_synthetic_dataset(&args.out, args.rows, args.seed)?;
            println!("wrote {} and {}", csv.display(), schema.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
