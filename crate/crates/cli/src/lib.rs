//! Command-line front end: data generation, training, adaptation, evaluation
//! and report emission, each into its own run directory with a replayable
//! manifest.

mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chebysfda_core::adapt::AdaptConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "chebysfda", version, about = "Confidence-guided source-free adaptation on a synthetic benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark as PGM files plus index.json.
    GenData(GenDataArgs),
    /// Train the source model on the source-train split.
    TrainSource(TrainSourceArgs),
    /// Adapt a source checkpoint to the target-train split.
    Adapt(AdaptArgs),
    /// Score a checkpoint's segmentation on one split.
    EvalSeg(EvalSegArgs),
    /// Compare pseudo-label noise detectors on a source model.
    EvalDenoise(EvalDenoiseArgs),
    /// One adaptation run per weighting sharpness.
    SweepGamma(SweepGammaArgs),
    /// One adaptation run per ablation row.
    Ablate(AblateArgs),
    /// Rerun a recorded command into a new run directory.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_source_train: Option<usize>,
    #[arg(long)]
    pub n_target_train: Option<usize>,
    #[arg(long)]
    pub n_target_test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Diversity,
    StudentBranch,
    ConfidenceWeighting,
    DirectDenoise,
    ProtoDenoise,
}

/// Config file plus per-key overrides.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON config; absent keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Pseudo-label threshold.
    #[arg(long = "threshold")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mc_passes: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub weight_sign: Option<i32>,
    #[arg(long)]
    pub source_epochs: Option<usize>,
    /// Switch off one component (repeatable).
    #[arg(long, value_enum)]
    pub disable: Vec<Component>,
}

#[derive(Debug, Args)]
pub struct TrainSourceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub source_ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write an SVG chart.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    SourceTrain,
    TargetTrain,
    TargetTest,
}

#[derive(Debug, Args)]
pub struct EvalSegArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::TargetTest)]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalDenoiseArgs {
    #[arg(long)]
    pub source_ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::TargetTest)]
    pub split: Split,
    /// Comma-separated subset of entropy, uncertainty,
    /// chebyshev_complement, prototypical, combined.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub entropy_threshold: Option<f64>,
    #[arg(long)]
    pub uncertainty_threshold: Option<f64>,
    #[arg(long)]
    pub chebyshev_threshold: Option<f64>,
    /// Confidence cut of the combined mask (default: end of the schedule).
    #[arg(long)]
    pub eta: Option<f64>,
    /// PR curves use thresholds i / steps for i in 0..=steps.
    #[arg(long, default_value_t = 200)]
    pub curve_steps: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SweepGammaArgs {
    #[arg(long)]
    pub source_ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub source_ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A run directory or its manifest.json.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Invalid arguments or configuration (exit 2).
    Usage(anyhow::Error),
    /// Anything that went wrong while running (exit 1).
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<chebysfda_core::Error> for Failure {
    fn from(e: chebysfda_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

impl ConfigArgs {
    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> CmdResult<AdaptConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                AdaptConfig::from_json(&text)
                    .map_err(|e| Failure::Usage(anyhow::anyhow!("{}: {e}", path.display())))?
            }
            None => AdaptConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(
            seed => seed,
            epochs => epochs,
            lr => lr,
            batch_size => batch_size,
            gamma => gamma,
            lambda => lambda,
            threshold => threshold,
            beta => beta,
            mc_passes => mc_passes,
            dropout_rate => dropout_rate,
            weight_sign => weight_sign,
            source_epochs => source.epochs,
        );
        for c in &self.disable {
            let t = &mut cfg.toggles;
            match c {
                Component::Diversity => t.diversity = false,
                Component::StudentBranch => t.student_branch = false,
                Component::ConfidenceWeighting => t.confidence_weighting = false,
                Component::DirectDenoise => t.direct_denoise = false,
                Component::ProtoDenoise => t.proto_denoise = false,
            }
        }
        cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
        Ok(cfg)
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli.command, &args) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub(crate) fn ensure_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(())
}
