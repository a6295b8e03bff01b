//! Command-line front end: `region`, `verify`, `simulate` and `sweep`.
//!
//! Every command reads one TOML experiment file (or the built-in two-user
//! example when `--config` is omitted), applies the command-line overrides,
//! validates everything, and only then starts work. Outputs go to `--out`
//! and each one carries the schema version, the config hash and the seed.
//!
//! # Config schema
//!
//! ```toml
//! [channels]
//! symmetric = { p01 = 0.2, p10 = 0.2, n = 2 }   # or:
//! # pairs = [[0.2, 0.2], [0.1, 0.3]]            # (p01, p10) per channel
//!
//! [utility]
//! kind = "log1p"            # or "linear"
//! weights = [1.0, 1.0]      # optional, defaults to all ones
//!
//! [control]
//! v_g = [10.0, 50.0, 250.0] # simulate uses the first entry
//! mode = "exhaustive"       # "symmetric_fast" | "pairs_only"
//! enumeration_cap = 16
//!
//! [run]
//! horizon = 1000000
//! warmup = 100000           # optional, defaults to horizon / 10
//! seed = 1
//! seeds = [1, 2, 3]         # optional, sweep replicates
//! age_cap = 1000000
//!
//! [region]
//! rays = 181                # boundary fan size for N = 2
//!
//! [verify]
//! tolerance = 0.005
//! random_subsets = 5
//! ```
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error, 3 verify
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capacity::{
    b_constant, eta_vector, region_summary, round_length_law, solve_offline_optimum, ActivationVector,
    CapacityError, InnerRegion, DEFAULT_ENUMERATION_CAP,
};
use crate::channel::{ChannelError, ChannelModel, DEFAULT_AGE_CAP};
use crate::controller::{ControllerError, SelectionMode, Selector};
use crate::policy::{PolicyError, PolicyRandRR};
use crate::rng;
use crate::sim::{
    run_fixed_policy, run_qrrnum, stability_diagnostic, RunConfig, SimError, Stability, DEFAULT_SLOPE_THRESHOLD,
};
use crate::utility::{BuiltinUtility, UtilityError, UtilityFunction};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("run failed: {0}")]
    Runtime(String),

    #[error("verification failed for {failures} of {checks} coordinates")]
    VerifyFailed { failures: usize, checks: usize },

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Io { .. } => 2,
            CliError::VerifyFailed { .. } => 3,
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}
validation_from!(ChannelError, UtilityError, ControllerError, CapacityError);

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Inner region vertices, boundary fan and round-length constants.
    Region,
    /// Monte Carlo check of the region vertices under saturated round robin.
    Verify,
    /// One QRRNUM run with a per-frame log.
    Simulate,
    /// QRRNUM over a grid of V_g values and seeds.
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Region => "region",
            Command::Verify => "verify",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Exhaustive,
    SymmetricFast,
    PairsOnly,
}

impl From<ModeArg> for SelectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exhaustive => SelectionMode::Exhaustive,
            ModeArg::SymmetricFast => SelectionMode::SymmetricFast,
            ModeArg::PairsOnly => SelectionMode::PairsOnly,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qrrnum", version, about = "Utility-optimal scheduling over Markov ON/OFF channels")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Experiment file (TOML); the two-user example is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override run.seed (and drop run.seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override run.horizon in slots.
    #[arg(long, global = true)]
    horizon: Option<u64>,

    /// Override control.v_g, comma separated.
    #[arg(long = "vg", global = true, value_delimiter = ',')]
    v_g: Option<Vec<f64>>,

    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,

    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Progress on stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetricChannels {
    pub p01: f64,
    pub p10: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetric: Option<SymmetricChannels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[f64; 2]>>,
}

impl ChannelsSection {
    pub fn models(&self) -> Result<Vec<ChannelModel>> {
        let models = match (&self.symmetric, &self.pairs) {
            (Some(s), None) => vec![ChannelModel::new(s.p01, s.p10)?; s.n],
            (None, Some(pairs)) => pairs
                .iter()
                .map(|&[p01, p10]| ChannelModel::new(p01, p10))
                .collect::<std::result::Result<_, _>>()?,
            _ => {
                return Err(CliError::Validation(
                    "[channels] needs exactly one of `symmetric` or `pairs`".into(),
                ))
            }
        };
        if models.is_empty() {
            return Err(CliError::Validation("[channels] defines no channels".into()));
        }
        Ok(models)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    #[serde(default = "default_kind")]
    pub kind: BuiltinUtility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn default_kind() -> BuiltinUtility {
    BuiltinUtility::Log1p
}

impl Default for UtilitySection {
    fn default() -> Self {
        Self { kind: default_kind(), weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "default_vg")]
    pub v_g: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: SelectionMode,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
}

fn default_vg() -> Vec<f64> {
    vec![50.0]
}
fn default_mode() -> SelectionMode {
    SelectionMode::Exhaustive
}
fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

impl Default for ControlSection {
    fn default() -> Self {
        Self { v_g: default_vg(), mode: default_mode(), enumeration_cap: default_cap() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_age_cap")]
    pub age_cap: u64,
}

fn default_horizon() -> u64 {
    1_000_000
}
fn default_seed() -> u64 {
    1
}
fn default_age_cap() -> u64 {
    DEFAULT_AGE_CAP
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            warmup: None,
            seed: default_seed(),
            seeds: None,
            age_cap: default_age_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    #[serde(default = "default_rays")]
    pub rays: usize,
}

fn default_rays() -> usize {
    181
}

impl Default for RegionSection {
    fn default() -> Self {
        Self { rays: default_rays() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_random_subsets")]
    pub random_subsets: usize,
}

fn default_tolerance() -> f64 {
    0.005
}
fn default_random_subsets() -> usize {
    5
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { tolerance: default_tolerance(), random_subsets: default_random_subsets() }
    }
}

/// The experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channels: ChannelsSection,
    #[serde(default)]
    pub utility: UtilitySection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub region: RegionSection,
    #[serde(default)]
    pub verify: VerifySection,
}

impl ExperimentConfig {
    /// The two-user symmetric example with `p01 = p10 = 0.2`.
    pub fn two_user_example() -> Self {
        Self {
            channels: ChannelsSection {
                symmetric: Some(SymmetricChannels { p01: 0.2, p10: 0.2, n: 2 }),
                pairs: None,
            },
            utility: UtilitySection::default(),
            control: ControlSection::default(),
            run: RunSection::default(),
            region: RegionSection::default(),
            verify: VerifySection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_g: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SelectionMode>,
}

/// A fully specified invocation; written next to the outputs as
/// `config_echo.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub overrides: Overrides,
    pub config: ExperimentConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment serializes")
    }

    /// The config with overrides applied.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.config.clone();
        if let Some(seed) = self.overrides.seed {
            c.run.seed = seed;
            c.run.seeds = None;
        }
        if let Some(h) = self.overrides.horizon {
            c.run.horizon = h;
        }
        if let Some(v) = &self.overrides.v_g {
            c.control.v_g = v.clone();
        }
        if let Some(m) = self.overrides.mode {
            c.control.mode = m;
        }
        c
    }
}

/// Reads an experiment file; a previous `config_echo.toml` works too and
/// contributes its own overrides.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let is_echo = text
        .parse::<toml::Table>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .contains_key("command");
    if is_echo {
        Ok(ExperimentSpec::from_toml(&text)?.resolved())
    } else {
        ExperimentConfig::from_toml(&text)
    }
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub models: Vec<ChannelModel>,
    pub utility: UtilityFunction,
    pub hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let models = config.channels.models()?;
        let n = models.len();
        let weights = config.utility.weights.clone().unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(CliError::Validation(format!(
                "[utility] has {} weights for {n} channels",
                weights.len()
            )));
        }
        let utility = UtilityFunction::builtin(config.utility.kind, &weights)?;
        if config.control.v_g.is_empty() {
            return Err(CliError::Validation("[control] v_g list is empty".into()));
        }
        if let Some(&v) = config.control.v_g.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(ControllerError::InvalidVg(v).into());
        }
        let run = &config.run;
        if let Some(warmup) = run.warmup.filter(|&w| w > run.horizon) {
            return Err(CliError::Validation(
                SimError::WarmupExceedsHorizon { warmup, horizon: run.horizon }.to_string(),
            ));
        }
        // TOML integers are signed.
        let integers = [run.horizon, run.seed, run.age_cap, run.warmup.unwrap_or(0)];
        if integers.iter().chain(run.seeds.iter().flatten()).any(|&v| v > i64::MAX as u64) {
            return Err(CliError::Validation(format!("[run] integers must be <= {}", i64::MAX)));
        }
        if run.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(CliError::Validation("[run] seeds list is empty".into()));
        }
        if run.age_cap == 0 {
            return Err(ChannelError::ZeroAgeCap.into());
        }
        if config.region.rays == 0 {
            return Err(CliError::Validation("[region] rays must be >= 1".into()));
        }
        if !(config.verify.tolerance.is_finite() && config.verify.tolerance > 0.0) {
            return Err(CliError::Validation("[verify] tolerance must be > 0".into()));
        }
        let hash = config.hash();
        Ok(Self { config, models, utility, hash })
    }

    pub fn channels(&self) -> usize {
        self.models.len()
    }

    pub fn seed(&self) -> u64 {
        self.config.run.seed
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.config.run.seeds.clone().unwrap_or_else(|| vec![self.config.run.seed])
    }

    /// The region matching the control mode; refuses oversized exhaustive
    /// enumeration.
    pub fn region(&self) -> Result<InnerRegion> {
        Ok(match self.config.control.mode {
            SelectionMode::PairsOnly => InnerRegion::pairs_only(&self.models)?,
            _ => InnerRegion::exhaustive(&self.models, self.config.control.enumeration_cap)?,
        })
    }

    pub fn run_config(&self, v_g: f64, seed: u64) -> RunConfig {
        let c = &self.config;
        RunConfig {
            models: self.models.clone(),
            utility: self.utility.clone(),
            v_g,
            mode: c.control.mode,
            enumeration_cap: c.control.enumeration_cap,
            horizon: c.run.horizon,
            warmup: c.run.warmup,
            seed,
            age_cap: c.run.age_cap,
            record_frames: false,
            trajectory_stride: 0,
        }
    }

    fn check_selector(&self) -> Result<()> {
        Selector::new(&self.models, self.config.control.mode, self.config.control.enumeration_cap)?;
        Ok(())
    }
}

/// Provenance stamped on every output.
#[derive(Debug, Clone, Serialize)]
struct Provenance<'a> {
    schema_version: u32,
    config_hash: &'a str,
    seed: u64,
}

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: vec![] }
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn floats(v: &[f64]) -> impl Iterator<Item = Value> + '_ {
    v.iter().map(|&x| json!(x))
}

struct Sink<'a> {
    dir: &'a Path,
    format: Format,
    provenance: Provenance<'a>,
    written: Vec<PathBuf>,
}

impl Sink<'_> {
    fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let path = match self.format {
            Format::Csv => self.dir.join(format!("{stem}.csv")),
            Format::Json => self.dir.join(format!("{stem}.json")),
        };
        let bytes = match self.format {
            Format::Csv => {
                let mut out = format!(
                    "# schema_version={} config_hash={} seed={}\n",
                    self.provenance.schema_version, self.provenance.config_hash, self.provenance.seed
                )
                .into_bytes();
                let mut w = csv::Writer::from_writer(&mut out);
                let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
                w.write_record(&table.columns).map_err(csv_err)?;
                for row in &table.rows {
                    w.write_record(row.iter().map(cell)).map_err(csv_err)?;
                }
                w.flush().map_err(io_err(&path))?;
                drop(w);
                out
            }
            Format::Json => {
                let body = json!({
                    "schema_version": self.provenance.schema_version,
                    "config_hash": self.provenance.config_hash,
                    "seed": self.provenance.seed,
                    "columns": table.columns,
                    "rows": table.rows,
                });
                serde_json::to_vec_pretty(&body).expect("json serializes")
            }
        };
        self.write(path, &bytes)
    }

    fn summary(&mut self, stem: &str, mut body: Value) -> Result<()> {
        let obj = body.as_object_mut().expect("summary is an object");
        obj.insert("schema_version".into(), json!(self.provenance.schema_version));
        obj.insert("config_hash".into(), json!(self.provenance.config_hash));
        obj.insert("seed".into(), json!(self.provenance.seed));
        let bytes = serde_json::to_vec_pretty(&body).expect("json serializes");
        self.write(self.dir.join(format!("{stem}.json")), &bytes)
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable lines for stdout.
    pub report: Vec<String>,
}

/// Validates the experiment and runs its command.
pub fn run(spec: &ExperimentSpec, verbose: bool) -> Result<Outcome> {
    let exp = Experiment::new(spec.resolved())?;
    match spec.command {
        Command::Region => {
            exp.region()?;
        }
        Command::Simulate | Command::Sweep => exp.check_selector()?,
        Command::Verify => {}
    }
    fs::create_dir_all(&spec.out).map_err(io_err(&spec.out))?;
    let mut sink = Sink {
        dir: &spec.out,
        format: spec.format,
        provenance: Provenance { schema_version: SCHEMA_VERSION, config_hash: &exp.hash, seed: exp.seed() },
        written: vec![],
    };
    let echo = spec.out.join("config_echo.toml");
    sink.write(echo, spec.to_toml().as_bytes())?;
    let log = |msg: String| {
        if verbose {
            eprintln!("[{}] {msg}", spec.command.as_str());
        }
    };
    let mut report = vec![];
    let result = match spec.command {
        Command::Region => cmd_region(&exp, &mut sink, &mut report, log),
        Command::Verify => cmd_verify(&exp, &mut sink, &mut report, log),
        Command::Simulate => cmd_simulate(&exp, &mut sink, &mut report, log),
        Command::Sweep => cmd_sweep(&exp, &mut sink, &mut report, log),
    };
    report.push(format!("wrote {} files to {}", sink.written.len(), spec.out.display()));
    result.map(|()| Outcome { files: sink.written, report })
}

fn fan_directions(n: usize, rays: usize, seed: u64) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0]],
        2 => (0..rays)
            .map(|i| {
                let theta = if rays == 1 { std::f64::consts::FRAC_PI_4 } else {
                    std::f64::consts::FRAC_PI_2 * i as f64 / (rays - 1) as f64
                };
                vec![theta.cos().max(0.0), theta.sin().max(0.0)]
            })
            .collect(),
        _ => {
            let mut rng = rng::auxiliary(seed);
            (0..rays)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        }
    }
}

fn cmd_region(exp: &Experiment, sink: &mut Sink, report: &mut Vec<String>, log: impl Fn(String)) -> Result<()> {
    let n = exp.channels();
    let region = exp.region()?;
    log(format!("{} vertices", region.vertices().len()));

    let mut vertices = Table::new(std::iter::once("phi".to_string()).chain(indexed("eta", n)).collect());
    for v in region.vertices() {
        vertices
            .rows
            .push(std::iter::once(json!(v.phi.to_bit_string())).chain(floats(&v.eta)).collect());
    }
    sink.table("vertices", &vertices)?;

    let directions = fan_directions(n, exp.config.region.rays, exp.seed());
    let points = directions
        .par_iter()
        .map(|d| region.boundary_probe(d))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut boundary = Table::new(
        std::iter::once("ray".to_string())
            .chain(indexed("direction", n))
            .chain(indexed("rate", n))
            .collect(),
    );
    for (i, (d, p)) in directions.iter().zip(&points).enumerate() {
        boundary
            .rows
            .push(std::iter::once(json!(i)).chain(floats(d)).chain(floats(p)).collect());
    }
    sink.table("boundary", &boundary)?;
    log(format!("{} boundary probes", points.len()));

    let summary = region_summary(&exp.models, &region)?;
    let mut named = serde_json::Map::new();
    for ch in 0..n {
        let mut axis = vec![0.0; n];
        axis[ch] = 1.0;
        named.insert(format!("axis_{}", ch + 1), json!(region.boundary_probe(&axis)?));
    }
    let diagonal = region.boundary_probe(&vec![1.0; n])?;
    named.insert("diagonal".into(), json!(diagonal));
    report.push(format!(
        "{} vertices; E[T] = {:.6}, E[T^2] = {:.6}, B = {:.6}",
        summary.vertex_count, summary.mean_round_length, summary.round_length_second_moment, summary.b_constant
    ));
    report.push(format!("diagonal boundary point: {diagonal:.6?}"));
    sink.summary(
        "region_summary",
        json!({
            "channels": summary.channels,
            "kind": summary.kind,
            "vertex_count": summary.vertex_count,
            "mean_round_length": summary.mean_round_length,
            "round_length_second_moment": summary.round_length_second_moment,
            "b_constant": summary.b_constant,
            "named_points": named,
        }),
    )
}

/// Singletons, all-ones, then distinct random subsets.
fn verify_subsets(n: usize, random: usize, seed: u64) -> Result<Vec<ActivationVector>> {
    let mut out: Vec<ActivationVector> = (0..n)
        .map(|c| ActivationVector::from_channels(&[c], n))
        .collect::<std::result::Result<_, _>>()?;
    let all = ActivationVector::all(n)?;
    if !out.contains(&all) {
        out.push(all);
    }
    let distinct = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
    let target = out.len() + random.min((distinct as usize).saturating_sub(out.len()));
    let mut rng = rng::auxiliary(seed);
    while out.len() < target {
        let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let phi = ActivationVector::from_bits(&bits)?;
        if !phi.is_zero() && !out.contains(&phi) {
            out.push(phi);
        }
    }
    Ok(out)
}

fn cmd_verify(exp: &Experiment, sink: &mut Sink, report: &mut Vec<String>, log: impl Fn(String) + Sync) -> Result<()> {
    let n = exp.channels();
    let tolerance = exp.config.verify.tolerance;
    let subsets = verify_subsets(n, exp.config.verify.random_subsets, exp.seed())?;
    let results = subsets
        .par_iter()
        .map(|phi| {
            let config = exp.run_config(1.0, exp.seed());
            let metrics = run_fixed_policy(&config, &PolicyRandRR::pure(*phi)?, &vec![1.0; n])?;
            let eta = eta_vector(&exp.models, phi)?;
            log(format!("phi = {} done", phi.to_bit_string()));
            Ok((*phi, metrics.mean_delivered, eta))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Table::new(
        ["phi", "channel", "empirical", "analytical", "abs_error", "pass"].map(String::from).to_vec(),
    );
    let mut failures = 0;
    let mut checks = 0;
    for (phi, empirical, eta) in &results {
        for ch in 0..n {
            let err = (empirical[ch] - eta[ch]).abs();
            let pass = err <= tolerance;
            checks += 1;
            failures += usize::from(!pass);
            table.rows.push(vec![
                json!(phi.to_bit_string()),
                json!(ch + 1),
                json!(empirical[ch]),
                json!(eta[ch]),
                json!(err),
                json!(pass),
            ]);
        }
    }
    sink.table("verify", &table)?;
    sink.summary(
        "verify_summary",
        json!({
            "subsets": subsets.iter().map(|p| p.to_bit_string()).collect::<Vec<_>>(),
            "tolerance": tolerance,
            "horizon": exp.config.run.horizon,
            "checks": checks,
            "failures": failures,
            "pass": failures == 0,
        }),
    )?;
    report.push(format!(
        "{} subsets, {checks} coordinates, {failures} outside ±{tolerance}",
        subsets.len()
    ));
    if failures > 0 {
        return Err(CliError::VerifyFailed { failures, checks });
    }
    Ok(())
}

fn cmd_simulate(exp: &Experiment, sink: &mut Sink, report: &mut Vec<String>, log: impl Fn(String)) -> Result<()> {
    let n = exp.channels();
    let v_g = exp.config.control.v_g[0];
    let mut config = exp.run_config(v_g, exp.seed());
    config.record_frames = true;
    log(format!("V_g = {v_g}, horizon = {}", config.horizon));
    let metrics = run_qrrnum(&config)?;
    let b = b_constant(&exp.models)?;
    let stability = stability_diagnostic(&metrics, DEFAULT_SLOPE_THRESHOLD);

    let mut frames = Table::new(
        ["t_k", "T_k", "phi"]
            .map(String::from)
            .into_iter()
            .chain(indexed("r", n))
            .chain(indexed("Q", n))
            .collect(),
    );
    for f in &metrics.frame_log {
        let phi = f.phi.unwrap_or(ActivationVector::zero(n)?);
        frames.rows.push(
            [json!(f.start), json!(f.length), json!(phi.to_bit_string())]
                .into_iter()
                .chain(floats(&f.admitted))
                .chain(floats(&f.backlog))
                .collect(),
        );
    }
    sink.table("frames", &frames)?;
    report.push(format!(
        "g(y) = {:.6}, mean backlog = {:.3}, slope = {:.2e} ({:?})",
        metrics.utility,
        metrics.mean_backlog,
        metrics.backlog_slope.unwrap_or(f64::NAN),
        stability.verdict
    ));
    sink.summary(
        "simulate_summary",
        json!({
            "v_g": v_g,
            "horizon": metrics.horizon,
            "warmup": metrics.warmup,
            "frames": metrics.frames,
            "idle_frames": metrics.idle_frames,
            "mean_delivered": metrics.mean_delivered,
            "mean_admitted": metrics.mean_admitted,
            "utility": metrics.utility,
            "mean_backlog": metrics.mean_backlog,
            "backlog_slope": metrics.backlog_slope,
            "stability": stability.verdict,
            "b_constant": b,
            "b_over_vg": b / v_g,
            "max_ledger_residual": metrics.max_ledger_residual,
        }),
    )
}

fn cmd_sweep(exp: &Experiment, sink: &mut Sink, report: &mut Vec<String>, log: impl Fn(String) + Sync) -> Result<()> {
    let region = exp.region()?;
    let optimum = solve_offline_optimum(&region, &exp.utility)?;
    let b = b_constant(&exp.models)?;
    log(format!("g* = {:.6}, B = {b:.4}", optimum.value));
    let grid: Vec<(f64, u64)> = exp
        .config
        .control
        .v_g
        .iter()
        .flat_map(|&v| exp.seeds().into_iter().map(move |s| (v, s)))
        .collect();
    let runs = grid
        .par_iter()
        .map(|&(v, seed)| {
            let m = run_qrrnum(&exp.run_config(v, seed))?;
            log(format!("V_g = {v}, seed = {seed}: g = {:.6}", m.utility));
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Table::new(
        ["v_g", "seed", "utility", "bound", "mean_backlog", "backlog_slope", "stable"]
            .map(String::from)
            .to_vec(),
    );
    for (&(v, seed), m) in grid.iter().zip(&runs) {
        let stable = stability_diagnostic(m, DEFAULT_SLOPE_THRESHOLD).verdict == Stability::Stable;
        table.rows.push(vec![
            json!(v),
            json!(seed),
            json!(m.utility),
            json!(optimum.value - b / v),
            json!(m.mean_backlog),
            json!(m.backlog_slope),
            json!(stable),
        ]);
        report.push(format!(
            "V_g = {v:>8}: g = {:.6} (bound {:.6}), mean backlog {:.2}",
            m.utility,
            optimum.value - b / v,
            m.mean_backlog
        ));
    }
    sink.table("sweep", &table)?;
    sink.summary(
        "sweep_summary",
        json!({
            "offline_optimum": optimum.value,
            "offline_point": optimum.point,
            "b_constant": b,
            "round_length": round_length_law(&exp.models, &ActivationVector::all(exp.channels())?)?.mean(),
            "v_g": exp.config.control.v_g,
            "seeds": exp.seeds(),
        }),
    )
}

fn spec_from_args(args: &Args) -> Result<ExperimentSpec> {
    let config = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::two_user_example(),
    };
    Ok(ExperimentSpec {
        command: args.command,
        config_path: args.config.clone(),
        out: args.out.clone(),
        format: args.format,
        overrides: Overrides {
            seed: args.seed,
            horizon: args.horizon,
            v_g: args.v_g.clone(),
            mode: args.mode.map(Into::into),
        },
        config,
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = spec_from_args(&args).and_then(|spec| run(&spec, args.verbose));
    match outcome {
        Ok(o) => {
            for line in o.report {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
