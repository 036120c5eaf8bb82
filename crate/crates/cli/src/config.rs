//! Command-line flags, the optional TOML config file, and their merge.
//!
//! Precedence is flag > config file > built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the resolved-config echo written into every output directory.
pub const ECHO_FILE: &str = "resolved_config.toml";

#[derive(Debug, Parser)]
#[command(name = "beadnet", version, about = "Bead-bag tactile sensing: simulate, train, evaluate, stream")]
pub struct Cli {
    /// TOML file with optional [gen], [train], [eval] and [infer] tables; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; falls back to BEADNET_WORKERS, then to the number of cores
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic press dataset
    Gen(GenArgs),
    /// Train the U-Net on a dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a baseline) on a dataset split
    Eval(EvalArgs),
    /// Stream frames through a checkpoint, one pressure map per frame
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset root to create
    #[arg(long)]
    pub out: PathBuf,
    /// Number of press episodes
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    /// Seed for every random choice
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mean frames per episode
    #[arg(long, default_value_t = 192)]
    pub frames: usize,
    /// Indenter radius in mm
    #[arg(long, default_value_t = 5.0)]
    pub finger_radius_mm: f64,
    /// Upper bound of the per-episode peak force in N
    #[arg(long, default_value_t = 20.0)]
    pub peak_force_n: f64,
    /// Pixels per side of frames and pressure maps
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    /// Standard deviation of the additive image noise
    #[arg(long, default_value_t = 0.01)]
    pub noise_std: f64,
    /// Replace the dataset files in a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints, the log and the summary
    #[arg(long)]
    pub out: PathBuf,
    /// Total optimizer steps
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    /// Seed for initialisation and sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adam step size
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Windows per step
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Window length in frames
    #[arg(long, default_value_t = 15)]
    pub h: usize,
    /// Encoder width at full resolution
    #[arg(long, default_value_t = 64)]
    pub base_channels: usize,
    /// LeakyReLU negative slope
    #[arg(long, default_value_t = 0.01)]
    pub leaky_slope: f64,
    /// Constant multiplier on the network output
    #[arg(long, default_value_t = 1.0)]
    pub output_scale: f64,
    /// Steps between validations (0: only at the start and the end)
    #[arg(long, default_value_t = 100)]
    pub val_every: u64,
    /// Frame stride of the validation sweep
    #[arg(long, default_value_t = 1)]
    pub val_stride: usize,
    /// Continue from <out>/latest.ckpt up to --steps in total
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Predict zero pressure everywhere
    Zero,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset root
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for the report and figures
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth force gate for CoP and IOU, in N
    #[arg(long, default_value_t = 2.0)]
    pub gate_n: f64,
    /// Split to evaluate (train, val or test)
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluate a baseline instead of a checkpoint
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    pub baseline: Option<Baseline>,
    /// Window length used by a baseline
    #[arg(long, default_value_t = 15)]
    pub h: usize,
    /// Episodes whose peak frame is rendered as a sample figure
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint to run
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Episode directory, or `-` for raw RGB u8 frames on stdin
    #[arg(long)]
    pub source: String,
    /// Output directory for maps and time series
    #[arg(long)]
    pub out: PathBuf,
    /// Frame rate used for timestamps
    #[arg(long, default_value_t = 30.0)]
    pub frame_hz: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    gen: GenFile,
    #[serde(default)]
    train: TrainFile,
    #[serde(default)]
    eval: EvalFile,
    #[serde(default)]
    infer: InferFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenFile {
    episodes: Option<usize>,
    seed: Option<u64>,
    frames: Option<usize>,
    finger_radius_mm: Option<f64>,
    peak_force_n: Option<f64>,
    grid: Option<usize>,
    noise_std: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    steps: Option<u64>,
    seed: Option<u64>,
    lr: Option<f64>,
    batch: Option<usize>,
    h: Option<usize>,
    base_channels: Option<usize>,
    leaky_slope: Option<f64>,
    output_scale: Option<f64>,
    val_every: Option<u64>,
    val_stride: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    gate_n: Option<f64>,
    split: Option<String>,
    h: Option<usize>,
    samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferFile {
    frame_hz: Option<f64>,
}

/// Fully resolved settings of `gen`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenConfig {
    pub episodes: usize,
    pub seed: u64,
    pub frames: usize,
    pub finger_radius_mm: f64,
    pub peak_force_n: f64,
    pub grid: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRunConfig {
    pub data: PathBuf,
    pub steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub h: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    pub output_scale: f64,
    pub val_every: u64,
    pub val_stride: usize,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub data: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
    pub gate_n: f64,
    pub split: String,
    pub h: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferConfig {
    pub checkpoint: PathBuf,
    pub source: String,
    pub frame_hz: f64,
}

fn load_file(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Flag value if given on the command line, else the file value, else the flag default.
fn pick<T>(m: &ArgMatches, id: &str, flag: T, file: Option<T>) -> T {
    if m.value_source(id) == Some(ValueSource::CommandLine) {
        flag
    } else {
        file.unwrap_or(flag)
    }
}

pub fn resolve_gen(a: &GenArgs, m: &ArgMatches, file: Option<&Path>) -> Result<GenConfig, CliError> {
    let f = load_file(file)?.gen;
    Ok(GenConfig {
        episodes: pick(m, "episodes", a.episodes, f.episodes),
        seed: pick(m, "seed", a.seed, f.seed),
        frames: pick(m, "frames", a.frames, f.frames),
        finger_radius_mm: pick(m, "finger_radius_mm", a.finger_radius_mm, f.finger_radius_mm),
        peak_force_n: pick(m, "peak_force_n", a.peak_force_n, f.peak_force_n),
        grid: pick(m, "grid", a.grid, f.grid),
        noise_std: pick(m, "noise_std", a.noise_std, f.noise_std),
    })
}

pub fn resolve_train(a: &TrainArgs, m: &ArgMatches, file: Option<&Path>) -> Result<TrainRunConfig, CliError> {
    let f = load_file(file)?.train;
    Ok(TrainRunConfig {
        data: a.data.clone(),
        steps: pick(m, "steps", a.steps, f.steps),
        seed: pick(m, "seed", a.seed, f.seed),
        lr: pick(m, "lr", a.lr, f.lr),
        batch: pick(m, "batch", a.batch, f.batch),
        h: pick(m, "h", a.h, f.h),
        base_channels: pick(m, "base_channels", a.base_channels, f.base_channels),
        leaky_slope: pick(m, "leaky_slope", a.leaky_slope, f.leaky_slope),
        output_scale: pick(m, "output_scale", a.output_scale, f.output_scale),
        val_every: pick(m, "val_every", a.val_every, f.val_every),
        val_stride: pick(m, "val_stride", a.val_stride, f.val_stride),
        resume: a.resume,
    })
}

pub fn resolve_eval(a: &EvalArgs, m: &ArgMatches, file: Option<&Path>) -> Result<EvalConfig, CliError> {
    let f = load_file(file)?.eval;
    Ok(EvalConfig {
        data: a.data.clone(),
        checkpoint: a.checkpoint.clone(),
        baseline: a.baseline,
        gate_n: pick(m, "gate_n", a.gate_n, f.gate_n),
        split: pick(m, "split", a.split.clone(), f.split),
        h: pick(m, "h", a.h, f.h),
        samples: pick(m, "samples", a.samples, f.samples),
    })
}

pub fn resolve_infer(a: &InferArgs, m: &ArgMatches, file: Option<&Path>) -> Result<InferConfig, CliError> {
    let f = load_file(file)?.infer;
    Ok(InferConfig {
        checkpoint: a.checkpoint.clone(),
        source: a.source.clone(),
        frame_hz: pick(m, "frame_hz", a.frame_hz, f.frame_hz),
    })
}

/// Write `[section]` with the resolved settings into `dir`.
pub fn echo<T: Serialize>(dir: &Path, section: &str, cfg: &T) -> Result<(), CliError> {
    let mut table = toml::Table::new();
    let value = toml::Value::try_from(cfg).map_err(|e| CliError::Data(format!("cannot encode config: {e}")))?;
    table.insert(section.to_string(), value);
    let text = toml::to_string(&table).map_err(|e| CliError::Data(format!("cannot encode config: {e}")))?;
    let path = dir.join(ECHO_FILE);
    fs::write(&path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
