//! `fsd`: tracks, recordings, training mixes, training, closed-loop
//! evaluation, benchmarks and the teleoperation server behind one binary.
//!
//! Reports go to stdout as JSON together with the resolved config; logs go
//! to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<fsd_core::Error> for CliError {
    fn from(e: fsd_core::Error) -> Self {
        use fsd_core::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            E::TrackGeneration { .. } | E::OffTrack { .. } | E::OffWorld { .. } | E::Diverged { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<fsd_teleop::Error> for CliError {
    fn from(e: fsd_teleop::Error) -> Self {
        match e {
            fsd_teleop::Error::Core(e) => e.into(),
            fsd_teleop::Error::Io { .. } | fsd_teleop::Error::Json(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fsd", version, about = "Camera-only cone-track driving: simulate, record, train, evaluate")]
pub struct Cli {
    /// Config file; `fsd.json` in the working directory is used when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override such as `sim.v_max=4.86`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed; falls back to the config, then to FSD_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent jobs where the command allows them.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track generation.
    Track {
        #[command(subcommand)]
        command: TrackCommand,
    },
    /// Record scripted-expert sessions.
    Record(RecordArgs),
    /// Build an augmented training mix from recorded sessions.
    Mix(MixArgs),
    /// Train a steering model on a mix.
    Train(TrainArgs),
    /// Closed-loop evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Naive versus optimized inference timing.
    Bench(BenchArgs),
    /// Draw predicted steering onto recorded frames.
    Overlay(OverlayArgs),
    /// Run the teleoperation server.
    Serve(ServeArgs),
    /// Drive closed loop and write steering frames to a device or stdout.
    Stream(StreamArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Straight,
    Curvy,
    Circuit,
    Line,
}

#[derive(Debug, Subcommand)]
pub enum TrackCommand {
    /// Generate a track and write it as JSON.
    Gen {
        #[arg(long, value_enum, default_value = "curvy")]
        style: Style,
        #[arg(long, default_value_t = 600.0)]
        length: f64,
        #[arg(long, default_value_t = 3.0)]
        width_min: f64,
        #[arg(long, default_value_t = 5.0)]
        width_max: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Track file; without it the configured corpus is recorded.
    #[arg(long)]
    pub track: Option<PathBuf>,
    #[arg(long, default_value = "normative")]
    pub driver: String,
    #[arg(long, default_value_t = 3.0)]
    pub minutes: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hz: f64,
    /// Session directory, or the corpus root without `--track`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Session directories, or directories of sessions.
    #[arg(long, required = true, num_args = 1..)]
    pub sessions: Vec<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub no_shifted: bool,
    #[arg(long)]
    pub no_swerved: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    /// Ablation row whose network to use (original, dropout_activation,
    /// swerved_data, no_car_state, shifted_driving). Defaults to the
    /// sidecar written by `train`, then to shifted_driving.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct ModelTrack {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub track: PathBuf,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Time until off-track.
    Loop {
        #[command(flatten)]
        target: ModelTrack,
        #[arg(long, default_value_t = 300.0)]
        cap: f64,
        /// Trajectory log as CSV (t,s,d,y,v).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// The five-row ablation ladder on unseen circuits.
    Ablation {
        /// Working directory for the corpus, mixes and models.
        #[arg(long)]
        work: PathBuf,
    },
    /// Steering versus camera yaw for several fields of view.
    Fov {
        #[command(flatten)]
        target: ModelTrack,
        #[arg(long, value_delimiter = ',', default_value = "56,60,64")]
        fovs: Vec<f64>,
        #[arg(long, default_value_t = 30.0)]
        station: f64,
    },
    /// Return to the centerline from lateral offsets.
    Recovery {
        #[command(flatten)]
        target: ModelTrack,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1.5,-1,-0.5,0.5,1,1.5")]
        offsets: Vec<f64>,
    },
    /// Closed loop under actuation delays.
    Delay {
        #[command(flatten)]
        target: ModelTrack,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
        taus: Vec<f64>,
        #[arg(long, default_value_t = 300.0)]
        cap: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchVariant {
    Naive,
    Optimized,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub variant: BenchVariant,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Recorded session whose frames are annotated.
    #[arg(long)]
    pub session: PathBuf,
    /// Directory for the PPM sequence.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub track: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "teleop-session")]
    pub record_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub target: ModelTrack,
    /// Device path, or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub cap: f64,
    /// Pace output to the simulation rate instead of running flat out.
    #[arg(long)]
    pub realtime: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.code())
        }
    }
}
