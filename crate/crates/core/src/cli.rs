//! Command-line front end.
//!
//! Every command merges its JSON config (if any) with its flags, flags
//! winning, into a serializable run description. The description is executed
//! and written into a [`RunManifest`] next to the outputs; `replay` executes
//! a manifest's description again.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::geometry::{
    add_gaussian_noise, read_csv, sample_manifold, write_csv_string, GeometryError, ManifoldKind,
    ManifoldSpec, PointCloud,
};
use crate::kde_asdf::{KdeAsdf, KdeError};
use crate::metrics::{
    rate_study, run_experiment, table_presets, AsdfKind, ExperimentConfig, ExperimentReport,
    MetricsError, Profile, DEFAULT_KDE_SIGMA,
};
use crate::pca_asdf::{
    build_packet, pca_schedule, validate_packet, validate_packet_with, PcaError, ValidationOptions,
};
use crate::ridge::{run_descent, traces_to_csv, DescentConfig, DescentTrace, RidgeError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

const THREADS_ENV: &str = "RIDGECRAFT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    GeometryError,
    KdeError,
    PcaError,
    RidgeError,
    MetricsError,
    std::io::Error
);

#[derive(Debug, Parser)]
#[command(name = "ridgecraft", version, about = "Manifold estimation by ridge descent on approximate squared-distance functions")]
pub struct Cli {
    /// Worker threads; falls back to RIDGECRAFT_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic manifold, optionally with Gaussian noise.
    Sample(SampleArgs),
    /// Descend mesh points onto the ridge of an asdf fitted to a sample.
    Descend(DescendArgs),
    /// Run the benchmark table.
    Bench(BenchArgs),
    /// Build a cylinder packet and check the packet conditions.
    ValidatePacket(ValidateArgs),
    /// Hausdorff error against bandwidth, with the fitted log-log slope.
    Rate(RateArgs),
    /// Execute the run recorded in a manifest again.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifold: Option<ManifoldKind>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DescendArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    asdf: Option<AsdfKind>,
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Intrinsic dimension d.
    #[arg(long)]
    d: Option<usize>,
    /// σ for kde, τ̄ for pca.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    pca_epsilon: Option<f64>,
    #[arg(long)]
    pca_scale: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Absolute tolerance on the projected gradient norm.
    #[arg(long, conflicts_with = "relative_tolerance")]
    tolerance: Option<f64>,
    /// Tolerance as a multiple of the median initial gradient norm.
    #[arg(long)]
    relative_tolerance: Option<f64>,
    /// Reach and volume of the sampled manifold, for packet validation.
    #[arg(long)]
    reach: Option<f64>,
    #[arg(long)]
    volume: Option<f64>,
    /// Final points, one row per mesh point.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-point trace; defaults to `<out stem>.trace.csv`.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    tau_bar: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    reach: Option<f64>,
    #[arg(long)]
    volume: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Measure the count bound against the reach instead of τ̄.
    #[arg(long)]
    count_against_reach: bool,
    /// Also write the report table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifold: Option<ManifoldKind>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    asdf: Option<AsdfKind>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Option<Vec<f64>>,
    /// Sample size at the first bandwidth.
    #[arg(long)]
    n_fit: Option<usize>,
    #[arg(long)]
    n_mesh: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Compare the regenerated outputs with the existing files byte for byte.
    #[arg(long)]
    check: bool,
}

/// Written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The resolved run description; `replay` executes it.
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// 0 means one per core.
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRun {
    manifold: ManifoldKind,
    scale: f64,
    count: usize,
    seed: u64,
    noise_sd: f64,
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescendRun {
    asdf: AsdfKind,
    fit: PathBuf,
    mesh: PathBuf,
    intrinsic_dim: usize,
    bandwidth: Option<f64>,
    pca_epsilon: f64,
    pca_scale: f64,
    descent: DescentConfig,
    reach: Option<f64>,
    volume: Option<f64>,
    out: PathBuf,
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    profile: Profile,
    cells: Option<Vec<ExperimentConfig>>,
    trials: Option<usize>,
    n_fit: Option<usize>,
    n_mesh: Option<usize>,
    n_reference: Option<usize>,
    noise_sd: Option<f64>,
    seed: u64,
    out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchRun {
    cells: Vec<ExperimentConfig>,
    out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateRun {
    fit: PathBuf,
    tau_bar: f64,
    intrinsic_dim: usize,
    reach: f64,
    volume: f64,
    options: ValidationOptions,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateRun {
    manifold: ManifoldKind,
    scale: f64,
    asdf: AsdfKind,
    bandwidths: Vec<f64>,
    n_fit: usize,
    n_mesh: usize,
    trials: usize,
    noise_sd: f64,
    seed: u64,
    pca_epsilon: f64,
    out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be an integer, got `{v}`")))?,
            Err(_) => 0,
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, threads))
}

fn dispatch(command: Command, threads: usize) -> Result<(), CliError> {
    match command {
        Command::Sample(a) => {
            let run = resolve_sample(a)?;
            record("sample", threads, run, exec_sample)
        }
        Command::Descend(a) => {
            let run = resolve_descend(a)?;
            record("descend", threads, run, exec_descend)
        }
        Command::Bench(a) => {
            let run = resolve_bench(a)?;
            record("bench", threads, run, exec_bench)
        }
        Command::ValidatePacket(a) => {
            let run = resolve_validate(a)?;
            record("validate-packet", threads, run, exec_validate)
        }
        Command::Rate(a) => {
            let run = resolve_rate(a)?;
            record("rate", threads, run, exec_rate)
        }
        Command::Replay(a) => replay(&a.manifest, a.check, threads),
    }
}

/// What an executed run leaves behind. A run may complete with a validation
/// failure; its outputs and manifest are still written.
struct Outcome<R> {
    run: R,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
    failure: Option<CliError>,
}

fn record<R: Serialize>(
    command: &str,
    threads: usize,
    run: R,
    exec: fn(R) -> Result<Outcome<R>, CliError>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let outcome = exec(run)?;
    let manifest = RunManifest {
        command: command.to_string(),
        config: serde_json::to_value(&outcome.run).expect("run descriptions serialize"),
        seed: outcome.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        outputs: outcome.outputs,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&outcome.manifest, text.as_bytes())?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn replay(path: &Path, check: bool, threads: usize) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let before: Vec<Option<Vec<u8>>> = manifest.outputs.iter().map(|p| fs::read(p).ok()).collect();
    let config = manifest.config.clone();
    let result = match manifest.command.as_str() {
        "sample" => record("sample", threads, from_manifest(config)?, exec_sample),
        "descend" => record("descend", threads, from_manifest(config)?, exec_descend),
        "bench" => record("bench", threads, from_manifest(config)?, exec_bench),
        "validate-packet" => record("validate-packet", threads, from_manifest(config)?, exec_validate),
        "rate" => record("rate", threads, from_manifest(config)?, exec_rate),
        other => {
            return Err(CliError::Runtime(format!("manifest has unknown command `{other}`")));
        }
    };
    if !check {
        return result;
    }
    if let Err(e) = &result {
        if !matches!(e, CliError::Validation(_)) {
            return result;
        }
    }
    let mut differing = Vec::new();
    for (p, old) in manifest.outputs.iter().zip(before) {
        if old.is_none() || fs::read(p).ok() != old {
            differing.push(p.display().to_string());
        }
    }
    if differing.is_empty() {
        println!("replay reproduced {} output(s) byte for byte", manifest.outputs.len());
        result
    } else {
        Err(CliError::Validation(format!(
            "replay output differs from the recorded run: {}",
            differing.join(", ")
        )))
    }
}

fn from_manifest<R: DeserializeOwned>(config: Value) -> Result<R, CliError> {
    serde_json::from_value(config).map_err(|e| CliError::Runtime(format!("manifest config: {e}")))
}

// ---- resolution: defaults, then config file, then flags ----

fn read_config(path: &Option<PathBuf>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: invalid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    Ok(value)
}

/// Recursive merge; objects merge key by key, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[derive(Default)]
struct Flags(Map<String, Value>);

impl Flags {
    fn put<T: Serialize>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.0
                .insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
        }
    }

    fn put_path(&mut self, key: &str, value: &Option<PathBuf>) -> Result<(), CliError> {
        if let Some(p) = value {
            self.0.insert(key.to_string(), json!(absolute(p)?));
        }
        Ok(())
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
}

fn finish<R: DeserializeOwned>(defaults: Value, config: Value, flags: Flags) -> Result<R, CliError> {
    let mut merged = defaults;
    merge(&mut merged, config);
    merge(&mut merged, Value::Object(flags.0));
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("invalid settings: {e}")))
}

/// Relative paths inside a config file are taken relative to the working
/// directory, like flags.
fn absolutize_config(config: &mut Value, keys: &[&str]) -> Result<(), CliError> {
    for key in keys {
        if let Some(Value::String(s)) = config.get(*key) {
            let abs = absolute(Path::new(s))?;
            config[*key] = json!(abs);
        }
    }
    Ok(())
}

fn resolve_sample(a: SampleArgs) -> Result<SampleRun, CliError> {
    let mut config = read_config(&a.config)?;
    absolutize_config(&mut config, &["out"])?;
    let mut flags = Flags::default();
    flags.put("manifold", &a.manifold);
    flags.put("scale", &a.scale);
    flags.put("count", &a.count);
    flags.put("seed", &a.seed);
    flags.put("noise_sd", &a.noise_sd);
    flags.put_path("out", &a.out)?;
    let defaults = json!({"scale": 1.0, "seed": 0, "noise_sd": 0.0});
    let run: SampleRun = finish(defaults, config, flags)?;
    if run.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if !(run.noise_sd >= 0.0 && run.noise_sd.is_finite()) {
        return Err(CliError::Usage("--noise-sd must be finite and nonnegative".into()));
    }
    ManifoldSpec::new(run.manifold, run.scale).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(run)
}

fn resolve_descend(a: DescendArgs) -> Result<DescendRun, CliError> {
    let mut config = read_config(&a.config)?;
    absolutize_config(&mut config, &["fit", "mesh", "out", "trace_out"])?;
    let mut flags = Flags::default();
    flags.put("asdf", &a.asdf);
    flags.put_path("fit", &a.fit)?;
    flags.put_path("mesh", &a.mesh)?;
    flags.put("intrinsic_dim", &a.d);
    flags.put("bandwidth", &a.bandwidth);
    flags.put("pca_epsilon", &a.pca_epsilon);
    flags.put("pca_scale", &a.pca_scale);
    flags.put("reach", &a.reach);
    flags.put("volume", &a.volume);
    flags.put_path("out", &a.out)?;
    flags.put_path("trace_out", &a.trace_out)?;
    let mut descent = Map::new();
    if let Some(s) = a.step {
        descent.insert("step_size".into(), json!(s));
    }
    if let Some(m) = a.max_iters {
        descent.insert("max_iters".into(), json!(m));
    }
    if let Some(t) = a.tolerance {
        descent.insert("tolerance".into(), json!({"mode": "absolute", "value": t}));
    }
    if let Some(t) = a.relative_tolerance {
        descent.insert("tolerance".into(), json!({"mode": "relative", "value": t}));
    }
    if !descent.is_empty() {
        flags.0.insert("descent".into(), Value::Object(descent));
    }
    let asdf = match (&a.asdf, config.get("asdf")) {
        (Some(k), _) => *k,
        (None, Some(v)) => serde_json::from_value(v.clone())
            .map_err(|e| CliError::Usage(format!("invalid settings: asdf: {e}")))?,
        (None, None) => return Err(CliError::Usage("--asdf is required".into())),
    };
    let kind_defaults = ExperimentConfig {
        asdf,
        ..ExperimentConfig::default()
    };
    let defaults = json!({
        "intrinsic_dim": 1,
        "bandwidth": null,
        "pca_epsilon": kind_defaults.pca_epsilon,
        "pca_scale": kind_defaults.pca_scale,
        "descent": kind_defaults.resolved_descent(),
        "reach": null,
        "volume": null,
        "trace_out": null,
    });
    let mut run: DescendRun = finish(defaults, config, flags)?;
    run.descent
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if run.trace_out.is_none() {
        run.trace_out = Some(run.out.with_extension("trace.csv"));
    }
    Ok(run)
}

fn resolve_bench(a: BenchArgs) -> Result<BenchRun, CliError> {
    let mut config = read_config(&a.config)?;
    absolutize_config(&mut config, &["out_dir"])?;
    let mut flags = Flags::default();
    flags.put("profile", &a.profile);
    flags.put("seed", &a.seed);
    flags.put("trials", &a.trials);
    flags.put_path("out_dir", &a.out_dir)?;
    let defaults = json!({
        "profile": Profile::Ci,
        "cells": null,
        "trials": null,
        "n_fit": null,
        "n_mesh": null,
        "n_reference": null,
        "noise_sd": null,
        "seed": 0,
    });
    let file: BenchFile = finish(defaults, config, flags)?;
    let mut cells = file.cells.unwrap_or_else(|| table_presets(file.profile));
    if cells.is_empty() {
        return Err(CliError::Usage("bench config has no cells".into()));
    }
    for c in &mut cells {
        c.seed = file.seed;
        if let Some(t) = file.trials {
            c.trials = t;
        }
        if let Some(n) = file.n_fit {
            c.n_fit = n;
        }
        if let Some(n) = file.n_mesh {
            c.n_mesh = n;
        }
        if let Some(n) = file.n_reference {
            c.n_reference = n;
        }
        if let Some(s) = file.noise_sd {
            c.noise_sd = s;
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut names: Vec<String> = cells.iter().map(cell_name).collect();
    names.sort();
    names.dedup();
    if names.len() != cells.len() {
        return Err(CliError::Usage(
            "bench cells must have distinct (asdf, manifold) pairs".into(),
        ));
    }
    Ok(BenchRun {
        cells,
        out_dir: file.out_dir,
    })
}

fn resolve_validate(a: ValidateArgs) -> Result<ValidateRun, CliError> {
    let mut config = read_config(&a.config)?;
    absolutize_config(&mut config, &["fit", "out"])?;
    let mut flags = Flags::default();
    flags.put_path("fit", &a.fit)?;
    flags.put("tau_bar", &a.tau_bar);
    flags.put("intrinsic_dim", &a.d);
    flags.put("reach", &a.reach);
    flags.put("volume", &a.volume);
    flags.put_path("out", &a.out)?;
    let mut options = Map::new();
    if let Some(k) = a.kappa {
        options.insert("kappa".into(), json!(k));
    }
    if a.count_against_reach {
        options.insert("count_against_reach".into(), json!(true));
    }
    if !options.is_empty() {
        flags.0.insert("options".into(), Value::Object(options));
    }
    let defaults = json!({"options": ValidationOptions::default(), "out": null});
    let run: ValidateRun = finish(defaults, config, flags)?;
    for (name, v) in [("tau_bar", run.tau_bar), ("reach", run.reach), ("volume", run.volume)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(run)
}

fn resolve_rate(a: RateArgs) -> Result<RateRun, CliError> {
    let mut config = read_config(&a.config)?;
    absolutize_config(&mut config, &["out"])?;
    let mut flags = Flags::default();
    flags.put("manifold", &a.manifold);
    flags.put("scale", &a.scale);
    flags.put("asdf", &a.asdf);
    flags.put("bandwidths", &a.bandwidths);
    flags.put("n_fit", &a.n_fit);
    flags.put("n_mesh", &a.n_mesh);
    flags.put("trials", &a.trials);
    flags.put("noise_sd", &a.noise_sd);
    flags.put("seed", &a.seed);
    flags.put_path("out", &a.out)?;
    let defaults = json!({
        "manifold": ManifoldKind::Circle2D,
        "scale": 1.0,
        "bandwidths": [0.2, 0.1, 0.05],
        "n_fit": 1000,
        "n_mesh": 200,
        "trials": 5,
        "noise_sd": 0.0,
        "seed": 0,
        "pca_epsilon": 0.5,
    });
    let run: RateRun = finish(defaults, config, flags)?;
    ManifoldSpec::new(run.manifold, run.scale).map_err(|e| CliError::Usage(e.to_string()))?;
    if run.bandwidths.len() < 3 {
        return Err(CliError::Usage("--bandwidths needs at least 3 values".into()));
    }
    Ok(run)
}

// ---- execution ----

fn exec_sample(run: SampleRun) -> Result<Outcome<SampleRun>, CliError> {
    let spec = ManifoldSpec::new(run.manifold, run.scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let clean = sample_manifold(&spec, run.count, run.seed)?;
    let cloud = add_gaussian_noise(&clean, run.noise_sd, run.seed)?;
    write_atomic(&run.out, write_csv_string(&cloud, true).as_bytes())?;
    println!("wrote {} points to {}", cloud.len(), run.out.display());
    Ok(Outcome {
        seed: Some(run.seed),
        outputs: vec![run.out.clone()],
        manifest: manifest_path(&run.out),
        failure: None,
        run,
    })
}

fn exec_descend(mut run: DescendRun) -> Result<Outcome<DescendRun>, CliError> {
    let fit = read_csv(&run.fit)?;
    let mesh = read_csv(&run.mesh)?;
    let n = fit.ambient_dim();
    let d = run.intrinsic_dim;
    if d == 0 || d >= n {
        return Err(CliError::Usage(format!(
            "--d must lie in [1, {}) for {n}-dimensional data, got {d}",
            n
        )));
    }
    if mesh.ambient_dim() != n {
        return Err(CliError::Runtime(format!(
            "mesh has {} columns but the fit sample has {n}",
            mesh.ambient_dim()
        )));
    }
    let bandwidth = match (run.bandwidth, run.asdf) {
        (Some(b), _) => b,
        (None, AsdfKind::Kde) => DEFAULT_KDE_SIGMA,
        (None, AsdfKind::Pca) => pca_schedule(fit.len(), d, run.pca_epsilon, run.pca_scale)?,
    };
    run.bandwidth = Some(bandwidth);
    let output = match run.asdf {
        AsdfKind::Kde => run_descent(&KdeAsdf::new(fit, bandwidth, d)?, &mesh, &run.descent)?,
        AsdfKind::Pca => {
            let packet = build_packet(&fit, bandwidth, d)?;
            match (run.reach, run.volume) {
                (Some(reach), Some(volume)) => {
                    let report = validate_packet(&packet, reach, volume)?;
                    if !report.all_passed() {
                        eprintln!(
                            "warning: packet fails {}; descending anyway",
                            report.failed().join(", ")
                        );
                        eprint!("{}", report.to_table());
                    }
                }
                _ => eprintln!("note: pass --reach and --volume to validate the packet"),
            }
            run_descent(&packet, &mesh, &run.descent)?
        }
    };
    let finals = final_cloud(&output.traces, n)?;
    let trace_out = run.trace_out.clone().unwrap_or_else(|| run.out.with_extension("trace.csv"));
    write_atomic(&run.out, write_csv_string(&finals, true).as_bytes())?;
    write_atomic(&trace_out, traces_to_csv(&output.traces, n).as_bytes())?;
    let converged = output.traces.iter().filter(|t| t.converged).count();
    println!(
        "{converged}/{} mesh points converged (tolerance {:e}); finals in {}",
        output.traces.len(),
        output.tolerance,
        run.out.display()
    );
    Ok(Outcome {
        seed: None,
        outputs: vec![run.out.clone(), trace_out],
        manifest: manifest_path(&run.out),
        failure: None,
        run,
    })
}

fn final_cloud(traces: &[DescentTrace], n: usize) -> Result<PointCloud, CliError> {
    let data = traces.iter().flat_map(|t| t.final_point.iter().copied()).collect();
    Ok(PointCloud::from_flat(n, data)?)
}

fn cell_name(c: &ExperimentConfig) -> String {
    format!("{}_{}", c.asdf, c.manifold.kind())
}

fn exec_bench(run: BenchRun) -> Result<Outcome<BenchRun>, CliError> {
    fs::create_dir_all(&run.out_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", run.out_dir.display())))?;
    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    for cell in &run.cells {
        let report = run_experiment(cell)?;
        let name = cell_name(cell);
        let json_path = run.out_dir.join(format!("{name}.json"));
        let csv_path = run.out_dir.join(format!("{name}_rms.csv"));
        write_atomic(&json_path, report.to_json().as_bytes())?;
        write_atomic(&csv_path, report.rms_csv().as_bytes())?;
        outputs.push(json_path);
        outputs.push(csv_path);
        reports.push(report);
    }
    let table = bench_table(&reports);
    let table_path = run.out_dir.join("table.csv");
    write_atomic(&table_path, table.as_bytes())?;
    outputs.push(table_path);
    print!("{}", bench_summary(&reports));
    Ok(Outcome {
        seed: run.cells.first().map(|c| c.seed),
        outputs,
        manifest: run.out_dir.join("manifest.json"),
        failure: None,
        run,
    })
}

const TABLE_COLUMNS: [ManifoldKind; 3] = [
    ManifoldKind::Circle2D,
    ManifoldKind::ClosedCurve3D,
    ManifoldKind::Sphere3D,
];

/// Mean RMS with asdf rows and manifold columns.
fn bench_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("asdf,circle,curve,sphere\n");
    for asdf in [AsdfKind::Kde, AsdfKind::Pca] {
        let row: Vec<&ExperimentReport> = reports.iter().filter(|r| r.config.asdf == asdf).collect();
        if row.is_empty() {
            continue;
        }
        out.push_str(asdf.name());
        for kind in TABLE_COLUMNS {
            out.push(',');
            if let Some(r) = row.iter().find(|r| r.config.manifold.kind() == kind) {
                let _ = write!(out, "{}", r.mean_rms);
            }
        }
        out.push('\n');
    }
    out
}

fn bench_summary(reports: &[ExperimentReport]) -> String {
    let mut out = format!(
        "{:<5} {:<7} {:>6} {:>10} {:>12} {:>10} {:>7}\n",
        "asdf", "shape", "scale", "bandwidth", "mean RMS", "converged", "trials"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<5} {:<7} {:>6} {:>10.4} {:>12.4e} {:>10.3} {:>7}",
            r.config.asdf.name(),
            r.config.manifold.kind().name(),
            r.config.manifold.scale(),
            r.bandwidth,
            r.mean_rms,
            r.convergence_fraction,
            r.config.trials
        );
    }
    out
}

fn exec_validate(run: ValidateRun) -> Result<Outcome<ValidateRun>, CliError> {
    let fit = read_csv(&run.fit)?;
    let n = fit.ambient_dim();
    if run.intrinsic_dim == 0 || run.intrinsic_dim >= n {
        return Err(CliError::Usage(format!(
            "--d must lie in [1, {n}) for {n}-dimensional data, got {}",
            run.intrinsic_dim
        )));
    }
    let packet = build_packet(&fit, run.tau_bar, run.intrinsic_dim).map_err(|e| match e {
        PcaError::Geometry(GeometryError::NetInfeasible(msg)) => {
            CliError::Validation(format!("net infeasible: {msg}"))
        }
        other => other.into(),
    })?;
    let report = validate_packet_with(&packet, run.reach, run.volume, run.options)?;
    let table = report.to_table();
    print!("{table}");
    let mut outputs = Vec::new();
    if let Some(out) = &run.out {
        write_atomic(out, table.as_bytes())?;
        outputs.push(out.clone());
    }
    let failure = (!report.all_passed()).then(|| {
        CliError::Validation(format!("packet fails {}", report.failed().join(", ")))
    });
    let manifest = match &run.out {
        Some(out) => manifest_path(out),
        None => {
            let mut p = run.fit.clone().into_os_string();
            p.push(".validate.manifest.json");
            PathBuf::from(p)
        }
    };
    Ok(Outcome {
        seed: None,
        outputs,
        manifest,
        failure,
        run,
    })
}

fn exec_rate(run: RateRun) -> Result<Outcome<RateRun>, CliError> {
    let spec = ManifoldSpec::new(run.manifold, run.scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut base = ExperimentConfig::new(spec, run.asdf);
    base.n_fit = run.n_fit;
    base.n_mesh = run.n_mesh;
    base.trials = run.trials;
    base.noise_sd = run.noise_sd;
    base.seed = run.seed;
    base.pca_epsilon = run.pca_epsilon;
    base.n_reference = run.n_mesh;
    let study = rate_study(spec, run.asdf, &run.bandwidths, &base).map_err(|e| match e {
        MetricsError::InvalidConfig(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    let csv = study.to_csv();
    write_atomic(&run.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(Outcome {
        seed: Some(run.seed),
        outputs: vec![run.out.clone()],
        manifest: manifest_path(&run.out),
        failure: None,
        run,
    })
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Writes to a temporary sibling, then renames over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_recursive_and_patch_wins() {
        let mut base = json!({"a": 1, "d": {"x": 1, "y": 2}});
        merge(&mut base, json!({"d": {"y": 3}, "b": 2}));
        assert_eq!(base, json!({"a": 1, "b": 2, "d": {"x": 1, "y": 3}}));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["ridgecraft", "sample", "--manifold", "sphere", "--count", "0", "--out", "x.csv"]), EXIT_USAGE);
        assert_eq!(run(["ridgecraft", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["ridgecraft", "descend", "--asdf", "kde"]), EXIT_USAGE);
        assert_eq!(run(["ridgecraft", "--help"]), EXIT_OK);
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            manifest_path(Path::new("/tmp/out.csv")),
            PathBuf::from("/tmp/out.csv.manifest.json")
        );
    }
}
