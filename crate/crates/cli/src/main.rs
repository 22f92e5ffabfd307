mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rfcn::data::SplitPolicy;
use rfcn::gradcheck::Component;
use rfcn::metrics::Aggregation;
use rfcn::training::LearningMode;

/// Recurrent fully convolutional networks for video segmentation.
#[derive(Parser, Debug)]
#[command(name = "rfcn", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a moving-sprite dataset in the frames/ + masks/ layout.
    Synth(SynthArgs),
    /// Train a preset or architecture file on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint on every window of a dataset.
    Eval(EvalArgs),
    /// Predict the mask of the last frame of one window.
    Predict(PredictArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print per-layer shape tables.
    Inspect(InspectArgs),
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Read options from a `key = value` file; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sequences.
    #[arg(long, default_value_t = 12, value_parser = positive)]
    pub seqs: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 20, value_parser = positive)]
    pub len: usize,
    #[arg(long, default_value_t = 64, value_parser = positive)]
    pub height: usize,
    #[arg(long, default_value_t = 64, value_parser = positive)]
    pub width: usize,
    /// Sprites per sequence.
    #[arg(long, default_value_t = 2)]
    pub sprites: usize,
    /// Largest per-axis speed in pixels per frame.
    #[arg(long, default_value_t = 2)]
    pub max_speed: i64,
    /// Label threshold on frame intensity.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// IDX image file to draw glyphs from instead of procedural shapes.
    #[arg(long)]
    pub glyphs: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Which architecture to build.
#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelArgs {
    /// One of rfc-lenet, rfc-12s, rfc-vgg, fc-lenet, fc-12s, fc-vgg.
    #[arg(long, conflicts_with = "arch")]
    pub preset: Option<String>,
    /// Architecture file, one layer per line.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Spatial and channel scale applied to presets.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Window length L (frames per prediction).
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Train on the train part of this split instead of every sequence.
    #[arg(long)]
    pub split: Option<SplitPolicy>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value = "end-to-end")]
    pub mode: LearningMode,
    /// Trained baseline whose layers seed and freeze the recurrent model's
    /// prefix in decoupled mode.
    #[arg(long)]
    pub fc_checkpoint: Option<PathBuf>,
    /// Log metrics every N epochs and after the last; 0 disables them.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Parameterized layers to freeze from the start.
    #[arg(long, default_value_t = 0)]
    pub freeze_prefix: usize,
    #[arg(long, default_value_t = 0.95)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Probability clamp of the logistic loss.
    #[arg(long, default_value_t = 1e-7)]
    pub clamp: f64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
    All,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Load the checkpoint into this architecture instead of its own.
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<SplitPolicy>,
    /// Part of the split to score; `test` when a split is given, else `all`.
    #[arg(long, value_enum)]
    pub subset: Option<Subset>,
    /// Seed of the split shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value = "micro")]
    pub aggregation: Aggregation,
    /// Write one binary PGM mask per window into this directory.
    #[arg(long)]
    pub dump_masks: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The window's frames, oldest first (PGM or PNG).
    #[arg(long, num_args = 1.., required = true)]
    pub frames: Vec<PathBuf>,
    /// Output image; the extension picks PGM or PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write the probability map instead of the binary mask.
    #[arg(long)]
    pub probabilities: bool,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GradcheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Components to check (repeatable); all when absent.
    #[arg(long)]
    pub component: Vec<Component>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates sampled per component.
    #[arg(long, default_value_t = 200)]
    pub max_coords: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<Component>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InspectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Presets to show (repeatable); all six when nothing is selected.
    #[arg(long)]
    pub preset: Vec<String>,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Show the architecture stored in a checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Emit the architecture text instead of the table.
    #[arg(long)]
    pub text: bool,
}

/// A failed command and its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or architecture text: exit 1.
    Usage(String),
    /// Anything that failed while running: exit 2.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<rfcn::Error> for CliError {
    fn from(e: rfcn::Error) -> Self {
        match e {
            rfcn::Error::Argument(_) | rfcn::Error::Parse { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn run() -> Result<(), CliError> {
    let argv = config::expand(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Inspect(a) => commands::inspect(&a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().trim_start_matches("error: "));
            ExitCode::from(e.code())
        }
    }
}
