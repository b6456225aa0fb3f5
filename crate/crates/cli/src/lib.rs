//! The `traverse` command-line tool.
//!
//! Every subcommand takes `--config <file.toml>`; flags override the file's
//! table for that subcommand, which overrides the built-in defaults.

pub mod commands;
pub mod error;
pub mod server;
pub mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_RUNTIME};

#[derive(Debug, Parser)]
#[command(name = "traverse", version, about = "Traversability estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop near-duplicate frames by pose change.
    SelectFrames(SelectFramesArgs),
    /// Generate a synthetic dataset (images, annotations, manifest).
    SynthGen(SynthGenArgs),
    /// Supervised training.
    Train(TrainArgs),
    /// Training with gradient-reversal domain adaptation.
    Adapt(AdaptArgs),
    /// Metrics and overlays for a checkpoint on an annotated manifest.
    Eval(EvalArgs),
    /// Scores for individual images.
    Infer(InferArgs),
    /// Closed-loop run in a planar simulated world.
    NavigateSim(NavigateSimArgs),
    /// Serve the annotation data API and UI.
    AnnotateServe(AnnotateServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ConfigArg {
    /// TOML file with a table per subcommand.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectFramesArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Output manifest path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_th: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist_th: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comb: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthGenArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// `asphalt_like` or `grass_like`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// File name prefix for images.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_obstacles: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_obstacles: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f32>,
}

/// Flags shared by `train` and `adapt`.
#[derive(Debug, Args, Serialize)]
pub struct TrainingFlags {
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `false` trains with plain squared error.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Shorter image side after resizing; 0 keeps the original size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub short_side: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_width: Option<usize>,
    /// Pretrained encoder tensors in checkpoint format.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_weights: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Directory of annotation documents.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    /// Labelled source-domain manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_annotations: Option<PathBuf>,
    /// Unlabelled target-domain manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reversal_scale: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// Output directory for the report.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Write one overlay image per frame into this directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlays: Option<PathBuf>,
    /// Overshoot allowed before a section counts as unsafe.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub short_side: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for predictions and overlays.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Also render each prediction over its image.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub overlay: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub short_side: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct NavigateSimArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Use this network for perception instead of the analytic oracle.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// JSON world file with obstacle rectangles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    /// Built-in world: `open`, `wall`, `dead_end` or `corridor`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Oracle perception without a checkpoint: `camera` or `rays`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perception: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angular_gain: Option<f64>,
    /// Skip writing path.png.
    #[arg(long)]
    #[serde(skip)]
    pub no_render: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(skip)]
    pub render: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnnotateServeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub cfg: ConfigArg,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    /// Directory with the annotation UI build.
    #[arg(long = "static")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    use settings::resolve;
    match cli.command {
        Command::SelectFrames(a) => commands::select_frames(&resolve(a.cfg.config.as_deref(), &a)?),
        Command::SynthGen(a) => commands::synth_gen(&resolve(a.cfg.config.as_deref(), &a)?),
        Command::Train(a) => commands::train(&resolve(a.cfg.config.as_deref(), &a)?),
        Command::Adapt(a) => commands::adapt(&resolve(a.cfg.config.as_deref(), &a)?),
        Command::Eval(a) => commands::eval(&resolve(a.cfg.config.as_deref(), &a)?),
        Command::Infer(a) => commands::infer(&resolve(a.cfg.config.as_deref(), &a)?),
        Command::NavigateSim(mut a) => {
            if a.no_render {
                a.render = Some(false);
            }
            commands::navigate_sim(&resolve(a.cfg.config.as_deref(), &a)?)
        }
        Command::AnnotateServe(a) => server::serve(&resolve(a.cfg.config.as_deref(), &a)?),
    }
}

/// Parses `args`, runs the subcommand and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
