//! `nsplat` — train, render, evaluate, verify, and generate toy datasets for
//! ellipsoid-bounded neural radiance primitives.
//!
//! Machine-readable results go to stdout as JSON; progress and tables go to
//! stderr. Exit codes: 0 success, 1 verification/numeric failure, 2 usage or
//! I/O error.

mod cmd_check;
mod cmd_eval;
mod cmd_gen_toy;
mod cmd_render;
mod cmd_train;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsplat_core::error::Error;

#[derive(Parser)]
#[command(name = "nsplat", version, about = "Splattable neural primitives: trainer, renderer, and verification suite")]
struct Cli {
    /// Worker threads (default: all cores; the NSPL_THREADS env var is used
    /// when the flag is absent).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Pin every stochastic choice to the given seeds and a single worker
    /// thread, so repeated invocations are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a scene to a posed image dataset.
    Train(TrainArgs),
    /// Render a trained checkpoint from dataset views or a camera file.
    Render(RenderArgs),
    /// Report PSNR/SSIM and model statistics for a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the numerical verification suites against independent oracles.
    Check(CheckArgs),
    /// Generate a synthetic dataset from an analytic solid.
    GenToy(GenToyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (`transforms_train.json` or `cameras*.txt` layout).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, log, and periodic snapshots.
    #[arg(long)]
    out: PathBuf,
    /// Override the iteration count from the config.
    #[arg(long)]
    iters: Option<u64>,
    /// Initial primitive centers as a .ply or .xyz point cloud
    /// (default: random points around the joint camera focus).
    #[arg(long)]
    points: Option<PathBuf>,
    /// Fix the primitive count: initialize exactly N primitives and disable
    /// population control.
    #[arg(long)]
    budget: Option<usize>,
    /// Keep the initial primitive count (no cloning/splitting/pruning).
    #[arg(long)]
    no_densify: bool,
    /// Integer image downscale factor applied at load time.
    #[arg(long, default_value_t = 1)]
    downscale: usize,
    /// Override the RNG seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file; fields omitted there keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Background color the images were composited over, as `r,g,b` in [0,1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
    /// Attach time-conditioned weights to every primitive so views with
    /// timestamps train a dynamic scene.
    #[arg(long)]
    temporal: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Trained checkpoint (.nspl).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory supplying posed views.
    #[arg(long, conflicts_with = "cameras", required_unless_present = "cameras")]
    data: Option<PathBuf>,
    /// Camera text file supplying named views.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Which dataset split to render (ignored with --cameras).
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
    /// Output directory for PNGs.
    #[arg(long)]
    out: PathBuf,
    /// Also write raw little-endian f64 RGB planes next to each PNG.
    #[arg(long)]
    raw: bool,
    /// Integer downscale applied to dataset cameras.
    #[arg(long, default_value_t = 1)]
    downscale: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint (.nspl).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory with ground-truth images.
    #[arg(long)]
    data: PathBuf,
    /// Which split to score.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
    /// Integer image downscale factor applied at load time.
    #[arg(long, default_value_t = 1)]
    downscale: usize,
    /// Also write the JSON report to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Which verification suite to run.
    #[arg(value_enum)]
    suite: SuiteChoice,
    /// Random case count for the integral/invariance suites.
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    /// Base seed for case generation (printed for replay on failure).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ray-march sample count for the render-oracle suite.
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Also exercise the time-conditioned closed form (integral suite).
    #[arg(long)]
    temporal: bool,
    /// Override the pass threshold on each suite's worst-case error.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct GenToyArgs {
    /// Analytic solid to image.
    #[arg(long, value_enum)]
    shape: ShapeChoice,
    /// Number of views on the upper hemisphere.
    #[arg(long, default_value_t = 8)]
    views: usize,
    /// Square image resolution.
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    /// Seed for the view arrangement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Background color as `r,g,b` in [0,1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteChoice {
    /// Closed-form segment integrals vs adaptive quadrature.
    Integrals,
    /// Additivity, parameterization-shift, and antiderivative cross-checks.
    Invariances,
    /// Analytic image gradients vs central finite differences.
    Gradients,
    /// Full renders vs a dense ray-marching reference.
    RenderOracle,
    /// Everything above.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ShapeChoice {
    Sphere,
    Box,
    Torus,
}

/// 1 = a numeric/verification failure in an otherwise valid invocation;
/// 2 = the invocation itself was unusable (bad flags, missing files, bad data).
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NanLoss { .. } | Error::SceneEmptied | Error::QuadratureDepth { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = match cli.threads {
        Some(n) => Some(n),
        None if cli.deterministic => Some(1),
        None => std::env::var("NSPL_THREADS").ok().and_then(|v| v.parse().ok()),
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Train(args) => cmd_train::run(args),
        Command::Render(args) => cmd_render::run(args),
        Command::Eval(args) => cmd_eval::run(args),
        Command::Check(args) => cmd_check::run(args),
        Command::GenToy(args) => cmd_gen_toy::run(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
