//! `vqd` command-line driver.
//!
//! Usage errors exit with code 2. Any other failure prints one JSON object
//! `{"error": <kind>, "message": <text>}` on stderr and exits with 1.

pub mod commands;
pub mod config;
pub mod log;
pub mod preview;
pub mod scorer;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vqd_core::Error;

pub use config::{Preset, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "vqd", version, about = "Learned animation degradation and video super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run config (JSON). Defaults to the tiny preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON-lines run log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Import clips from directories of PNG frames, dropping near-duplicate frames.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Directory whose subdirectories each hold one clip's frames.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "lq-train")]
        role: RoleArg,
    },
    /// Generate synthetic flat-color clips for every role.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean HR training clips with the configured enhancer.
    EnhanceHr {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the degradation model (stage 1 or 2).
    TrainDegradation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: u8,
        /// Manifest; every lq-train frame is a training image.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint to start stage 2 from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Checkpoint of this stage to continue.
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        /// Write `<out>.snapshot` every this many steps (0 disables).
        #[arg(long, default_value_t = 0)]
        snapshot_every: usize,
    },
    /// Synthesize LR clips from HR clips.
    Degrade {
        #[command(flatten)]
        common: Common,
        /// Stage-2 degradation model; needed when the learned stage is enabled.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the VSR network (stage 1 or 2).
    TrainVsr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: u8,
        /// Manifest; hr-train clips are the targets.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-2 degradation model (stage 2).
        #[arg(long)]
        degradation_model: Option<PathBuf>,
        /// Stage-1 VSR checkpoint (stage 2).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        snapshot_every: usize,
    },
    /// Super-resolve a clip directory or every clip of a manifest.
    Upscale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Directory of PNG frames, or a manifest file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score clips and write a CSV report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        metric: MetricArg,
        /// nriqa scorer: `gradient-energy`, `constant:<v>` or an executable
        /// that prints a score for the PNG crop path it is given.
        #[arg(long, default_value = "gradient-energy")]
        scorer: String,
        #[arg(long)]
        manifest: PathBuf,
        /// Ground-truth manifest for psnr and ssim; clips are matched by id.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render one frame degraded at several levels as a labeled grid.
    PreviewK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        /// Levels: `1,4,7` or `start:end:step`.
        #[arg(long)]
        k: String,
        /// Cells per row; defaults to a near-square layout.
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    LqTrain,
    HrTrain,
    Test,
}

impl From<RoleArg> for vqd_core::dataset::Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::LqTrain => Self::LqTrain,
            RoleArg::HrTrain => Self::HrTrain,
            RoleArg::Test => Self::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Psnr,
    Ssim,
    Nriqa,
}

/// Short machine-readable name of an error variant.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Contract(_) => "contract",
        Error::Shape(_) => "shape",
        Error::Range(_) => "range",
        Error::Config(_) => "config",
        Error::Parameter(_) => "parameter",
        Error::Stage { .. } => "stage",
        Error::Integrity { .. } => "integrity",
        Error::Version { .. } => "version",
        Error::ConfigDiff(_) => "config-diff",
        Error::Environment(_) => "environment",
        Error::Empty(_) => "empty",
        Error::NonFinite { .. } => "non-finite",
        Error::Io { .. } => "io",
        Error::Image { .. } => "image",
        Error::Json(_) => "json",
    }
}

pub fn error_line(e: &Error) -> String {
    let mut v = serde_json::json!({"error": error_kind(e), "message": e.to_string()});
    if let Error::ConfigDiff(fields) = e {
        v["fields"] = serde_json::json!(fields);
    }
    v.to_string()
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
