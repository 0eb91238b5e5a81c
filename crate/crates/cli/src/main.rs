//! `seismogpt` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, FromArgMatches, Parser, Subcommand};
use seismogpt::models::ModelKind;
use seismogpt::synth::DatasetMode;

/// Synthetic teleseismic data, transformer training and autoregressive
/// waveform forecasting.
///
/// Settings resolve as: command-line flags, then SEISMOFORGE_* environment
/// variables, then the `key = value` config file, then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "seismogpt", version)]
pub struct Cli {
    /// Plain-text `key = value` config file; keys are long flag names.
    #[arg(long, global = true, env = "SEISMOFORGE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads for data-parallel work (0 = all cores).
    #[arg(long, global = true, env = "SEISMOFORGE_THREADS", default_value_t = 0)]
    pub threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a forecaster on a dataset directory.
    Train(TrainArgs),
    /// Forecast a waveform file autoregressively and write an overlay CSV.
    Forecast(ForecastArgs),
    /// Horizon-resolved metrics on a held-out dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory (must exist).
    #[arg(long, env = "SEISMOFORGE_OUT")]
    pub out: PathBuf,
    /// Station layout: single receiver or the 16-station array.
    #[arg(long, env = "SEISMOFORGE_MODE", default_value = "single")]
    pub mode: DatasetMode,
    /// Number of events.
    #[arg(long, env = "SEISMOFORGE_EVENTS", default_value_t = 2000)]
    pub events: usize,
    /// Random seed.
    #[arg(long, env = "SEISMOFORGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Sampling rate in Hz.
    #[arg(long, env = "SEISMOFORGE_SAMPLING_RATE", default_value_t = 1.9)]
    pub sampling_rate: f64,
    /// Samples per trace.
    #[arg(long, env = "SEISMOFORGE_SAMPLES", default_value_t = 1536)]
    pub samples: usize,
    /// Shortest time from trace start to the P arrival, seconds.
    #[arg(long, env = "SEISMOFORGE_LEAD_MIN", default_value_t = 100.0)]
    pub lead_min: f64,
    /// Longest time from trace start to the P arrival, seconds.
    #[arg(long, env = "SEISMOFORGE_LEAD_MAX", default_value_t = 250.0)]
    pub lead_max: f64,
    /// Apparent plane-wave velocity across the array, km/s.
    #[arg(long, env = "SEISMOFORGE_VELOCITY", default_value_t = 10.0)]
    pub velocity: f64,
    /// Low-pass corner frequency, Hz.
    #[arg(long, env = "SEISMOFORGE_CORNER", default_value_t = 0.45)]
    pub corner: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long, env = "SEISMOFORGE_DATA")]
    pub data: PathBuf,
    /// Checkpoint path; holds the best-validation weights.
    #[arg(long, env = "SEISMOFORGE_OUT")]
    pub out: PathBuf,
    /// Per-epoch JSON-lines report [default: <out>.report.jsonl].
    #[arg(long, env = "SEISMOFORGE_REPORT")]
    pub report: Option<PathBuf>,
    /// Architecture.
    #[arg(long, env = "SEISMOFORGE_MODEL", default_value = "single")]
    pub model: ModelKind,
    /// Embedding width.
    #[arg(long, env = "SEISMOFORGE_D_MODEL", default_value_t = 128)]
    pub d_model: usize,
    /// Encoder layers.
    #[arg(long, env = "SEISMOFORGE_LAYERS", default_value_t = 6)]
    pub layers: usize,
    /// Attention heads.
    #[arg(long, env = "SEISMOFORGE_HEADS", default_value_t = 8)]
    pub heads: usize,
    /// Samples per token.
    #[arg(long, env = "SEISMOFORGE_TOKEN_LEN", default_value_t = 16)]
    pub token_len: usize,
    /// Context window in tokens.
    #[arg(long, env = "SEISMOFORGE_CONTEXT", default_value_t = 64)]
    pub context: usize,
    /// Initial learning rate.
    #[arg(long, env = "SEISMOFORGE_LR", default_value_t = 5e-4)]
    pub lr: f64,
    /// Step-decay factor.
    #[arg(long, env = "SEISMOFORGE_DECAY", default_value_t = 0.8)]
    pub decay: f64,
    /// Epochs between learning-rate decays.
    #[arg(long, env = "SEISMOFORGE_DECAY_EVERY", default_value_t = 5)]
    pub decay_every: usize,
    /// Maximum epochs.
    #[arg(long, env = "SEISMOFORGE_MAX_EPOCHS", default_value_t = 100)]
    pub max_epochs: usize,
    /// Non-improving epochs before stopping.
    #[arg(long, env = "SEISMOFORGE_PATIENCE", default_value_t = 3)]
    pub patience: usize,
    /// Run all epochs regardless of validation loss.
    #[arg(long, env = "SEISMOFORGE_NO_EARLY_STOPPING")]
    pub no_early_stopping: bool,
    /// Windows per optimizer step [default: 32 single, 8 array].
    #[arg(long, env = "SEISMOFORGE_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Fewest unpadded tokens a random padding mask keeps.
    #[arg(long, env = "SEISMOFORGE_MIN_KEEP", default_value_t = 8)]
    pub min_keep: usize,
    /// Fraction of events held out for validation.
    #[arg(long, env = "SEISMOFORGE_VAL_FRACTION", default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Random seed (initialization, split, batching, masks, dropout).
    #[arg(long, env = "SEISMOFORGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Dropout rate.
    #[arg(long, env = "SEISMOFORGE_DROPOUT", default_value_t = 0.1)]
    pub dropout: f64,
    /// Global gradient-norm clip (0 disables).
    #[arg(long, env = "SEISMOFORGE_CLIP_NORM", default_value_t = 1.0)]
    pub clip_norm: f64,
    /// Offset between training windows, samples.
    #[arg(long, env = "SEISMOFORGE_STRIDE", default_value_t = 16)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Model checkpoint.
    #[arg(long, env = "SEISMOFORGE_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Input trace: `.sgwf` (all stations) or `.csv` (time, Z, N, E).
    #[arg(long, env = "SEISMOFORGE_INPUT")]
    pub input: PathBuf,
    /// Overlay CSV; multi-station inputs write `<stem>.<station>.csv`.
    #[arg(long, env = "SEISMOFORGE_OUT")]
    pub out: PathBuf,
    /// Context length in tokens.
    #[arg(long, env = "SEISMOFORGE_CONTEXT_TOKENS", default_value_t = 40)]
    pub context_tokens: usize,
    /// Tokens to forecast.
    #[arg(long, env = "SEISMOFORGE_STEPS", default_value_t = 24)]
    pub steps: usize,
    /// First context token within the trace.
    #[arg(long, env = "SEISMOFORGE_START_TOKEN", default_value_t = 0)]
    pub start_token: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint (the single-station model when comparing).
    #[arg(long, env = "SEISMOFORGE_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Array-model checkpoint for --compare.
    #[arg(long, env = "SEISMOFORGE_ARRAY_CHECKPOINT")]
    pub array_checkpoint: Option<PathBuf>,
    /// Held-out dataset directory.
    #[arg(long, env = "SEISMOFORGE_DATA")]
    pub data: PathBuf,
    /// Metrics CSV.
    #[arg(long, env = "SEISMOFORGE_OUT")]
    pub out: PathBuf,
    /// Context length in tokens.
    #[arg(long, env = "SEISMOFORGE_CONTEXT_TOKENS", default_value_t = 40)]
    pub context_tokens: usize,
    /// Tokens to forecast.
    #[arg(long, env = "SEISMOFORGE_STEPS", default_value_t = 24)]
    pub steps: usize,
    /// Seed for the per-event window choice.
    #[arg(long, env = "SEISMOFORGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Compare the single-station and array checkpoints side by side.
    #[arg(long, env = "SEISMOFORGE_COMPARE")]
    pub compare: bool,
}

fn main() -> ExitCode {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let cli = match config::parse_with_config(args) {
        Ok(cli) => cli,
        Err(e) => return e.report(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

/// Failure categories with stable exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(seismogpt::Error),
    Clap(clap::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use seismogpt::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Clap(e) => e.exit_code() as u8,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Format { .. } => 3,
                E::NonFiniteLoss { .. } | E::NonFiniteGradient { .. } => 4,
                E::Mismatch(_) => 5,
                E::Shape { .. } | E::InvalidShape { .. } | E::DegenerateMask { .. } => 5,
                E::Contract(_) => 2,
            },
        }
    }

    fn report(self) -> ExitCode {
        let code = self.exit_code();
        match self {
            CliError::Clap(e) => {
                let _ = e.print();
            }
            CliError::Usage(m) => eprintln!("error: {m}"),
            CliError::Core(e) => eprintln!("error: {e}"),
        }
        ExitCode::from(code)
    }
}

impl From<seismogpt::Error> for CliError {
    fn from(e: seismogpt::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Clap(e)
    }
}

impl Cli {
    fn from_matches(m: &clap::ArgMatches) -> Result<Self, CliError> {
        Ok(<Cli as FromArgMatches>::from_arg_matches(m)?)
    }
}
