//! Experiment harness: configuration, seeded multi-run execution,
//! aggregation, CSV output and sampler diagnostics.
//!
//! Layout of an experiment directory:
//!
//! ```text
//! <out>/run_000.csv ... run_{R-1}.csv
//! <out>/aggregate.csv
//! <out>/metadata.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::envs::{make_gaussian_env, make_mixture_env, Environment, RegretTrace};
use crate::error::{Error, Result};
use crate::format::g17;
use crate::ingest::{self, EnvBundle, PrepConfig, TableSchema};
use crate::pg::{pg_mean, Pg1Source};
use crate::policies::{PolicySpec, POLICY_NAMES};
use crate::replay::{
    disjoint_policy_factory, generate_synthetic_log, replay_events, shared_policy_factory, write_log, LogEvent,
    LogReader, PolicyFactory, ReplayConfig, ReplayReport, DEFAULT_UPDATE_BATCH,
};
use crate::rng::{split_seed, RandomSource};

pub const SIMULATE_HEADER: &str = "run,t,arm,reward,inst_regret,cum_regret";
pub const REPLAY_HEADER: &str = "run,valid_t,arm,reward,ctr";
pub const DEFAULT_OUT_DIR: &str = "pgts-out";
pub const PRESETS: [&str; 4] = ["gaussian-sim", "mixture-sim", "cluster-sim", "replay-synthetic"];

/// Stream used to derive the environment seed from the master seed; run
/// seeds use streams `0..R`.
const ENV_STREAM: u64 = u64::MAX;
const LOG_STREAM: u64 = u64::MAX - 1;

/// Gaussian environment with optimal reward 0.9969 and mean 0.201.
pub const GAUSSIAN_SIM_SEED: u64 = 61;
/// Mixture environment with optimal reward 1.000 and mean 0.332.
pub const MIXTURE_SIM_SEED: u64 = 1649;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    Replay,
}

fn default_arms() -> usize {
    100
}
fn default_dim() -> usize {
    10
}
fn default_context_mean() -> f64 {
    -3.0
}
fn default_rows() -> usize {
    10_000
}
fn default_clusters() -> usize {
    ingest::DEFAULT_CLUSTERS
}
fn default_log_arms() -> usize {
    5
}
fn default_log_dim() -> usize {
    6
}
fn default_events() -> usize {
    20_000
}
fn default_update_batch() -> usize {
    DEFAULT_UPDATE_BATCH
}

/// Where rewards come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    /// Contexts and `θ*` drawn from `N(mean, I)` and `N(0, I)`.
    Gaussian {
        #[serde(default = "default_arms")]
        arms: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_context_mean")]
        context_mean: f64,
    },
    /// `θ*` drawn from the four-component Gaussian mixture.
    Mixture {
        #[serde(default = "default_arms")]
        arms: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Arms from a prepared bundle; without one, the synthetic table is
    /// generated and prepared inside the output directory.
    Cluster {
        #[serde(default)]
        bundle: Option<PathBuf>,
        #[serde(default = "default_rows")]
        rows: usize,
        #[serde(default = "default_clusters")]
        clusters: usize,
    },
    /// Logged events for replay; without a path a uniformly-logged
    /// synthetic log is generated.
    Log {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_log_arms")]
        arms: usize,
        #[serde(default = "default_log_dim")]
        dim: usize,
        #[serde(default = "default_events")]
        events: usize,
        /// One model per arm id instead of one shared model.
        #[serde(default)]
        disjoint: bool,
        #[serde(default = "default_update_batch")]
        update_batch: usize,
    },
}

impl EnvSpec {
    fn kind(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Mixture { .. } => "mixture",
            Self::Cluster { .. } => "cluster",
            Self::Log { .. } => "log",
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub preset: Option<String>,
    pub policy: PolicySpec,
    pub env: EnvSpec,
    /// Rounds per run; for replay, the valid-event budget.
    pub rounds: usize,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Draw a new environment for every run instead of sharing one.
    pub fresh_env_per_run: bool,
    /// Every field (dotted path) that was filled in from a default rather
    /// than from the config file or a flag.
    pub defaulted: Vec<String>,
}

/// Config file contents; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub command: Option<CommandKind>,
    pub preset: Option<String>,
    /// A policy name or an object `{"name": ..., hyperparameters}`.
    pub policy: Option<Value>,
    pub env: Option<Value>,
    pub rounds: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fresh_env_per_run: Option<bool>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides; these win over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub policy: Option<String>,
    pub runs: Option<usize>,
    pub rounds: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
}

struct Preset {
    policy: &'static str,
    env: EnvSpec,
    rounds: usize,
    runs: usize,
    /// Default master seed. For the simulation presets this is the first
    /// seed whose shared environment matches the optimal and mean rewards
    /// reported for the original experiment.
    seed: u64,
}

fn preset(name: &str) -> Result<Preset> {
    Ok(match name {
        "gaussian-sim" => Preset {
            policy: "pg-ts",
            env: EnvSpec::Gaussian {
                arms: 100,
                dim: 10,
                context_mean: -3.0,
            },
            rounds: 1000,
            runs: 100,
            seed: GAUSSIAN_SIM_SEED,
        },
        "mixture-sim" => Preset {
            policy: "pg-ts",
            env: EnvSpec::Mixture { arms: 100, dim: 10 },
            rounds: 5000,
            runs: 100,
            seed: MIXTURE_SIM_SEED,
        },
        "cluster-sim" => Preset {
            policy: "pg-ts",
            env: EnvSpec::Cluster {
                bundle: None,
                rows: default_rows(),
                clusters: 32,
            },
            rounds: 1000,
            runs: 100,
            seed: 0,
        },
        "replay-synthetic" => Preset {
            policy: "pg-ts-stream",
            env: EnvSpec::Log {
                path: None,
                arms: default_log_arms(),
                dim: default_log_dim(),
                events: default_events(),
                disjoint: false,
                update_batch: DEFAULT_UPDATE_BATCH,
            },
            rounds: default_events(),
            runs: 10,
            seed: 0,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    })
}

/// Deserialize `given` into `T` with serde defaults, reporting which keys
/// of the serialized result were absent from `given`.
fn with_defaults<T: Serialize + DeserializeOwned>(given: Value, prefix: &str) -> Result<(T, Vec<String>)> {
    let value: T = serde_json::from_value(given.clone()).map_err(|e| Error::Config(format!("{prefix}: {e}")))?;
    let full = serde_json::to_value(&value)?;
    let mut defaulted = Vec::new();
    if let (Some(full), Some(given)) = (full.as_object(), given.as_object()) {
        for key in full.keys() {
            if !given.contains_key(key) {
                defaulted.push(format!("{prefix}.{key}"));
            }
        }
    }
    Ok((value, defaulted))
}

fn policy_from_value(value: Value) -> Result<(PolicySpec, Vec<String>)> {
    let mut object = match value {
        Value::String(name) => {
            let mut m = Map::new();
            m.insert("name".into(), Value::String(name));
            m
        }
        Value::Object(m) => m,
        other => return Err(Error::Config(format!("policy must be a name or an object, got {other}"))),
    };
    // the streaming variant is PG-TS with a single sweep
    if object.get("name").and_then(Value::as_str) == Some("pg-ts-stream") {
        object.insert("name".into(), Value::String("pg-ts".into()));
        if object.contains_key("burn_in") {
            return Err(Error::Config("pg-ts-stream fixes burn_in at 1".into()));
        }
        object.insert("burn_in".into(), Value::from(1));
    }
    if let Some(name) = object.get("name").and_then(Value::as_str) {
        if !POLICY_NAMES.contains(&name) {
            return Err(Error::Config(format!(
                "unknown policy '{name}' (expected one of {})",
                POLICY_NAMES.join(", ")
            )));
        }
    }
    with_defaults(Value::Object(object), "policy")
}

/// Merge preset, config file and flags (in increasing priority) and
/// validate the result. Nothing is run.
pub fn resolve_config(command: CommandKind, raw: RawConfig, flags: &Overrides) -> Result<ExperimentConfig> {
    if let Some(c) = raw.command {
        if c != command {
            return Err(Error::Config(format!("config file is for {c:?}, not {command:?}")));
        }
    }
    let mut defaulted = Vec::new();
    let preset_name = match flags.preset.clone().or(raw.preset.clone()) {
        Some(p) => p,
        None => {
            defaulted.push("preset".to_string());
            match command {
                CommandKind::Simulate => "gaussian-sim".into(),
                CommandKind::Replay => "replay-synthetic".into(),
            }
        }
    };
    let base = preset(&preset_name)?;

    let policy_value = match (&flags.policy, raw.policy) {
        (Some(name), _) => Value::String(name.clone()),
        (None, Some(v)) => v,
        (None, None) => {
            defaulted.push("policy.name".into());
            Value::String(base.policy.into())
        }
    };
    let (mut policy, policy_defaults) = policy_from_value(policy_value)?;
    defaulted.extend(policy_defaults);
    if let Some(m) = flags.burn_in {
        match &mut policy {
            PolicySpec::PgTs { burn_in, .. } => *burn_in = m,
            other => {
                return Err(Error::Config(format!("--burn-in applies to pg-ts only, not {}", other.label())))
            }
        }
        defaulted.retain(|k| k != "policy.burn_in");
    }
    policy.validate()?;

    let (mut env, env_defaults) = match raw.env {
        Some(v) => with_defaults::<EnvSpec>(v, "env")?,
        None => (base.env, vec!["env".to_string()]),
    };
    defaulted.extend(env_defaults);
    match (&mut env, command) {
        (EnvSpec::Log { path, .. }, CommandKind::Replay) => {
            if let Some(p) = &flags.log {
                *path = Some(p.clone());
                defaulted.retain(|k| k != "env.path");
            }
        }
        (EnvSpec::Log { .. }, CommandKind::Simulate) => {
            return Err(Error::Config("simulate needs a gaussian, mixture or cluster environment".into()))
        }
        (other, CommandKind::Replay) => {
            return Err(Error::Config(format!("replay needs a log environment, not {}", other.kind())))
        }
        (EnvSpec::Cluster { bundle, .. }, CommandKind::Simulate) => {
            if let Some(b) = &flags.bundle {
                *bundle = Some(b.clone());
                defaulted.retain(|k| k != "env.bundle");
            }
        }
        _ => {}
    }
    if flags.log.is_some() && command != CommandKind::Replay {
        return Err(Error::Config("a log file only applies to replay".into()));
    }
    if flags.bundle.is_some() && !matches!(env, EnvSpec::Cluster { .. }) {
        return Err(Error::Config("a bundle only applies to a cluster environment".into()));
    }

    let mut pick = |name: &str, flag: Option<usize>, file: Option<usize>, fallback: usize| {
        flag.or(file).unwrap_or_else(|| {
            defaulted.push(name.to_string());
            fallback
        })
    };
    let rounds = pick("rounds", flags.rounds, raw.rounds, base.rounds);
    let runs = pick("runs", flags.runs, raw.runs, base.runs);
    let seed = flags.seed.or(raw.seed).unwrap_or_else(|| {
        defaulted.push("seed".into());
        base.seed
    });
    let out = flags.out.clone().or(raw.out).unwrap_or_else(|| {
        defaulted.push("out".into());
        PathBuf::from(DEFAULT_OUT_DIR)
    });
    let fresh_env_per_run = raw.fresh_env_per_run.unwrap_or_else(|| {
        defaulted.push("fresh_env_per_run".into());
        false
    });

    let config = ExperimentConfig {
        command,
        preset: Some(preset_name),
        policy,
        env,
        rounds,
        runs,
        seed,
        out,
        fresh_env_per_run,
        defaulted,
    };
    validate_config(&config)?;
    Ok(config)
}

pub fn validate_config(config: &ExperimentConfig) -> Result<()> {
    if config.rounds < 1 || config.runs < 1 {
        return Err(Error::Config("rounds and runs must both be >= 1".into()));
    }
    config.policy.validate()?;
    match &config.env {
        EnvSpec::Gaussian { arms, dim, context_mean } => {
            if *arms < 2 || *dim < 1 || !context_mean.is_finite() {
                return Err(Error::Config("gaussian env needs arms >= 2, dim >= 1, finite mean".into()));
            }
        }
        EnvSpec::Mixture { arms, dim } => {
            if *arms < 2 || *dim < 1 {
                return Err(Error::Config("mixture env needs arms >= 2 and dim >= 1".into()));
            }
        }
        EnvSpec::Cluster { bundle, rows, clusters } => {
            if bundle.is_none() && (*clusters < 2 || *rows < *clusters) {
                return Err(Error::Config("cluster env needs 2 <= clusters <= rows".into()));
            }
        }
        EnvSpec::Log {
            path,
            arms,
            dim,
            events,
            update_batch,
            ..
        } => {
            if *update_batch < 1 {
                return Err(Error::Config("update_batch must be >= 1".into()));
            }
            if path.is_none() && (*arms < 2 || *dim < 1 || *events < 1) {
                return Err(Error::Config("synthetic log needs arms >= 2, dim >= 1, events >= 1".into()));
            }
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!("log file {} not found", p.display())));
                }
            }
        }
    }
    Ok(())
}

/// How independent runs are scheduled. `Parallel` falls back to
/// sequential execution when the `parallel` feature is off. Results are
/// identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

fn map_runs<T, F>(runs: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..runs).into_par_iter().map(f).collect()
        }
        _ => (0..runs).map(f).collect(),
    }
}

/// Seed of run `run` under master seed `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    split_seed(seed, run as u64)
}

/// One bandit run of `rounds` rounds. The policy and the reward noise use
/// separate streams derived from `seed`.
pub fn simulate_run(env: &dyn Environment, policy: &PolicySpec, rounds: usize, seed: u64) -> Result<RegretTrace> {
    let mut agent = policy.build(env.dim())?;
    let mut policy_rng = RandomSource::derive(seed, 0);
    let mut reward_rng = RandomSource::derive(seed, 1);
    let mut trace = RegretTrace::new();
    let contexts = env.contexts();
    for _ in 0..rounds {
        let arm = agent.select(contexts, &mut policy_rng)?;
        let reward = env.step(arm, &mut reward_rng)?;
        trace.record(arm, reward, env.instant_regret(arm)?);
        agent.observe(&contexts[arm], arm, reward)?;
    }
    Ok(trace)
}

/// Completed and failed runs of an experiment.
#[derive(Debug, Clone, Default)]
pub struct Outcome<T> {
    pub completed: Vec<(usize, T)>,
    pub failed: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub error: String,
}

fn split_outcomes<T>(results: Vec<Result<T>>) -> Outcome<T> {
    let mut out = Outcome {
        completed: Vec::new(),
        failed: Vec::new(),
    };
    for (run, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.completed.push((run, v)),
            Err(e) => out.failed.push(RunFailure {
                run,
                error: e.to_string(),
            }),
        }
    }
    out
}

/// Environments built from an [`EnvSpec`]; either one shared instance or
/// one per run.
fn build_env(spec: &EnvSpec, seed: u64, scratch: &Path) -> Result<Box<dyn Environment>> {
    Ok(match spec {
        EnvSpec::Gaussian { arms, dim, context_mean } => Box::new(make_gaussian_env(*arms, *dim, *context_mean, seed)?),
        EnvSpec::Mixture { arms, dim } => Box::new(make_mixture_env(*arms, *dim, seed)?),
        EnvSpec::Cluster { bundle, rows, clusters } => {
            let bundle = match bundle {
                Some(path) => EnvBundle::load(path)?,
                None => synthetic_bundle(scratch, *rows, *clusters, seed)?,
            };
            Box::new(bundle.to_env()?)
        }
        EnvSpec::Log { .. } => return Err(Error::Config("a log is not a simulation environment".into())),
    })
}

/// Generate the synthetic table under `dir`, prepare it and save the
/// bundle next to it.
pub fn synthetic_bundle(dir: &Path, rows: usize, clusters: usize, seed: u64) -> Result<EnvBundle> {
    let (csv_path, schema_path) = ingest::write_synthetic_dataset(dir, rows, seed)?;
    let schema = TableSchema::from_json_file(&schema_path)?;
    let bundle = ingest::prepare_dataset(
        &csv_path,
        &schema,
        &PrepConfig {
            clusters,
            seed,
            ..PrepConfig::default()
        },
    )?;
    bundle.save(&dir.join("bundle.json"))?;
    Ok(bundle)
}

/// Run all simulation runs of `config` without writing anything.
pub fn simulate_runs(config: &ExperimentConfig, mode: ExecMode) -> Result<Outcome<RegretTrace>> {
    validate_config(config)?;
    let scratch = config.out.join("dataset");
    let env_seed = split_seed(config.seed, ENV_STREAM);
    let shared = if config.fresh_env_per_run {
        None
    } else {
        Some(build_env(&config.env, env_seed, &scratch)?)
    };
    let results = map_runs(config.runs, mode, |run| {
        let seed = run_seed(config.seed, run);
        match &shared {
            Some(env) => simulate_run(env.as_ref(), &config.policy, config.rounds, seed),
            None => {
                let env = build_env(&config.env, split_seed(seed, ENV_STREAM), &scratch.join(format!("run_{run:03}")))?;
                simulate_run(env.as_ref(), &config.policy, config.rounds, seed)
            }
        }
    });
    Ok(split_outcomes(results))
}

/// Load or generate the replay log described by `spec`.
pub fn replay_log(spec: &EnvSpec, seed: u64) -> Result<Vec<LogEvent>> {
    let EnvSpec::Log {
        path,
        arms,
        dim,
        events,
        ..
    } = spec
    else {
        return Err(Error::Config("replay needs a log environment".into()));
    };
    match path {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| Error::Load {
                path: p.clone(),
                message: e.to_string(),
            })?;
            LogReader::new(std::io::BufReader::new(file)).collect()
        }
        None => {
            let log_seed = split_seed(seed, LOG_STREAM);
            let mut rng = RandomSource::derive(log_seed, 0);
            let theta: Vec<f64> = (0..*dim).map(|_| rng.normal()).collect();
            generate_synthetic_log(*arms, *dim, &theta, *events, log_seed)
        }
    }
}

/// Replay every run of `config` over `events`.
pub fn replay_runs(config: &ExperimentConfig, events: &[LogEvent], mode: ExecMode) -> Result<Outcome<ReplayReport>> {
    validate_config(config)?;
    let EnvSpec::Log {
        disjoint, update_batch, ..
    } = config.env
    else {
        return Err(Error::Config("replay needs a log environment".into()));
    };
    let dim = events
        .first()
        .map(LogEvent::dim)
        .ok_or_else(|| Error::InvalidInput("replay log has no events".into()))?;
    let factory: PolicyFactory = if disjoint {
        disjoint_policy_factory(config.policy.clone(), dim)
    } else {
        shared_policy_factory(config.policy.clone(), dim)
    };
    let replay_config = ReplayConfig {
        update_batch,
        budget: Some(config.rounds),
    };
    let results = map_runs(config.runs, mode, |run| {
        let mut policy = factory()?;
        let mut rng = RandomSource::seed_from_u64(run_seed(config.seed, run));
        replay_events(policy.as_mut(), events, replay_config, &mut rng)
    });
    Ok(split_outcomes(results))
}

/// Per-index mean and sample standard deviation (`n - 1` denominator;
/// 0 for a single series) across equally long series.
pub fn aggregate(series: &[&[f64]]) -> Result<Vec<(f64, f64)>> {
    let first = series
        .first()
        .ok_or_else(|| Error::Aggregation("no completed runs to aggregate".into()))?;
    if let Some(bad) = series.iter().position(|s| s.len() != first.len()) {
        return Err(Error::Aggregation(format!(
            "series {bad} has length {}, expected {}",
            series[bad].len(),
            first.len()
        )));
    }
    let n = series.len() as f64;
    Ok((0..first.len())
        .map(|t| {
            let mean = series.iter().map(|s| s[t]).sum::<f64>() / n;
            let std = if series.len() < 2 {
                0.0
            } else {
                (series.iter().map(|s| (s[t] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            (mean, std)
        })
        .collect())
}

pub fn simulate_csv(run: usize, trace: &RegretTrace) -> String {
    let mut s = String::with_capacity(48 * trace.len());
    s.push_str(SIMULATE_HEADER);
    s.push('\n');
    for t in 0..trace.len() {
        let _ = writeln!(
            s,
            "{run},{},{},{},{},{}",
            t + 1,
            trace.arms[t],
            trace.rewards[t],
            g17(trace.instant[t]),
            g17(trace.cumulative[t])
        );
    }
    s
}

pub fn replay_csv(run: usize, report: &ReplayReport) -> String {
    let mut s = String::with_capacity(40 * report.rows.len());
    s.push_str(REPLAY_HEADER);
    s.push('\n');
    for row in &report.rows {
        let _ = writeln!(s, "{run},{},{},{},{}", row.valid_t, row.arm, row.reward, g17(row.ctr));
    }
    s
}

fn aggregate_csv(index_name: &str, value_name: &str, stats: &[(f64, f64)], runs: usize) -> String {
    let mut s = format!("{index_name},mean_{value_name},std_{value_name},runs\n");
    for (i, (mean, std)) in stats.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{runs}", i + 1, g17(*mean), g17(*std));
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub software: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub defaulted: Vec<String>,
    pub notes: Vec<String>,
    pub completed_runs: Vec<usize>,
    pub failed_runs: Vec<RunFailure>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub parallel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregated_length: Option<usize>,
}

fn notes_for(config: &ExperimentConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if let PolicySpec::GlmUcb { .. } = config.policy {
        notes.push(
            "glm-ucb: exploration rate alpha*sqrt(ln t) and ridge regularizer are not reported in the source; values here are this tool's defaults"
                .into(),
        );
    }
    match &config.env {
        EnvSpec::Log { path: None, .. } => {
            notes.push("synthetic log uses uniform logging, which rejection replay requires to be unbiased".into())
        }
        EnvSpec::Log { .. } => notes.push(
            "rejection replay is unbiased only if the log was collected with uniform display; aggregate covers the common prefix of valid events"
                .into(),
        ),
        EnvSpec::Cluster { .. } => notes.push(format!("standardization variance convention: {}", ingest::VARIANCE_CONVENTION)),
        _ => {}
    }
    if !config.fresh_env_per_run && config.command == CommandKind::Simulate {
        notes.push("one environment shared by all runs; runs differ in policy and reward randomness".into());
    }
    notes
}

/// Summary returned by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub metadata: Metadata,
    pub run_files: Vec<PathBuf>,
    pub aggregate_file: PathBuf,
    pub metadata_file: PathBuf,
    /// Per-round mean and std of cumulative regret (simulate) or CTR
    /// (replay).
    pub aggregate: Vec<(f64, f64)>,
}

/// Run `config` and write run CSVs, the aggregate CSV and metadata into
/// `config.out`.
pub fn run_experiment(config: &ExperimentConfig, mode: ExecMode) -> Result<ExperimentSummary> {
    validate_config(config)?;
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::create_dir_all(&config.out)?;

    let (files, failed, aggregate_text, stats, aggregated_length, completed) = match config.command {
        CommandKind::Simulate => {
            let outcome = simulate_runs(config, mode)?;
            let files: Vec<(PathBuf, String)> = outcome
                .completed
                .iter()
                .map(|(run, trace)| (config.out.join(format!("run_{run:03}.csv")), simulate_csv(*run, trace)))
                .collect();
            let series: Vec<&[f64]> = outcome.completed.iter().map(|(_, t)| t.cumulative.as_slice()).collect();
            let stats = aggregate(&series)?;
            let text = aggregate_csv("t", "cum_regret", &stats, series.len());
            let completed = outcome.completed.iter().map(|(r, _)| *r).collect();
            (files, outcome.failed, text, stats, None, completed)
        }
        CommandKind::Replay => {
            let events = replay_log(&config.env, config.seed)?;
            let outcome = replay_runs(config, &events, mode)?;
            let files: Vec<(PathBuf, String)> = outcome
                .completed
                .iter()
                .map(|(run, report)| (config.out.join(format!("run_{run:03}.csv")), replay_csv(*run, report)))
                .collect();
            let traces: Vec<Vec<f64>> = outcome
                .completed
                .iter()
                .map(|(_, r)| r.rows.iter().map(|row| row.ctr).collect())
                .collect();
            // runs accept different numbers of events
            let common = traces.iter().map(Vec::len).min().unwrap_or(0);
            let series: Vec<&[f64]> = traces.iter().map(|t| &t[..common]).collect();
            let stats = aggregate(&series)?;
            let text = aggregate_csv("valid_t", "ctr", &stats, series.len());
            let completed = outcome.completed.iter().map(|(r, _)| *r).collect();
            (files, outcome.failed, text, stats, Some(common), completed)
        }
    };

    for (path, text) in &files {
        fs::write(path, text)?;
    }
    let aggregate_file = config.out.join("aggregate.csv");
    fs::write(&aggregate_file, aggregate_text)?;

    let metadata = Metadata {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        defaulted: config.defaulted.clone(),
        notes: notes_for(config),
        config: config.clone(),
        completed_runs: completed,
        failed_runs: failed,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        parallel: cfg!(feature = "parallel") && mode == ExecMode::Parallel,
        aggregated_length,
    };
    let metadata_file = config.out.join("metadata.json");
    fs::write(&metadata_file, serde_json::to_string_pretty(&metadata)? + "\n")?;
    Ok(ExperimentSummary {
        metadata,
        run_files: files.into_iter().map(|(p, _)| p).collect(),
        aggregate_file,
        metadata_file,
        aggregate: stats,
    })
}

/// Write a synthetic replay log (canonical JSON lines) to `path`.
pub fn write_synthetic_log(path: &Path, arms: usize, dim: usize, events: usize, seed: u64) -> Result<()> {
    let spec = EnvSpec::Log {
        path: None,
        arms,
        dim,
        events,
        disjoint: false,
        update_batch: DEFAULT_UPDATE_BATCH,
    };
    let log = replay_log(&spec, seed)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path)?;
    write_log(&log, std::io::BufWriter::new(file))
}

pub const DEFAULT_DIAGNOSE_GRID: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 10.0];
pub const MIN_DIAGNOSE_DRAWS: usize = 1000;
pub const DIAGNOSE_ACCEPTANCE_FLOOR: f64 = 0.999;
pub const DIAGNOSE_Z_LIMIT: f64 = 4.0;
const ORACLE_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub c: f64,
    pub draws: usize,
    pub mean: f64,
    pub oracle: f64,
    pub z: f64,
    pub acceptance: f64,
    pub pass: bool,
}

/// Moment and acceptance check of a PG(1, c) source over a grid of tilts.
pub fn pg_diagnose<S: Pg1Source + ?Sized>(
    sampler: &mut S,
    grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<DiagnosticRow>> {
    if draws < MIN_DIAGNOSE_DRAWS {
        return Err(Error::InvalidParameter(format!(
            "pg-diagnose needs at least {MIN_DIAGNOSE_DRAWS} draws per tilt"
        )));
    }
    grid.iter()
        .enumerate()
        .map(|(i, &c)| {
            sampler.reset_stats();
            let mut rng = RandomSource::derive(seed, i as u64);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..draws {
                let w = sampler.draw_pg1(c, &mut rng)?;
                sum += w;
                sum_sq += w * w;
            }
            let n = draws as f64;
            let mean = sum / n;
            let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            let oracle = pg_mean(1, c, ORACLE_TERMS);
            let se = (var / n).sqrt();
            let z = if se > 0.0 { (mean - oracle) / se } else if mean == oracle { 0.0 } else { f64::INFINITY };
            let acceptance = sampler.stats().acceptance_rate();
            Ok(DiagnosticRow {
                c,
                draws,
                mean,
                oracle,
                z,
                acceptance,
                pass: acceptance >= DIAGNOSE_ACCEPTANCE_FLOOR && z.abs() <= DIAGNOSE_Z_LIMIT,
            })
        })
        .collect()
}

pub fn diagnostics_csv(rows: &[DiagnosticRow]) -> String {
    let mut s = String::from("c,draws,mean,oracle,z,acceptance,pass\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            g17(r.c),
            r.draws,
            g17(r.mean),
            g17(r.oracle),
            g17(r.z),
            g17(r.acceptance),
            r.pass
        );
    }
    s
}
