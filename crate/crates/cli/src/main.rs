mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Event-based motion estimation with NURBS trajectories.
#[derive(Debug, Parser)]
#[command(name = "emotive", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project events into a voxel grid and a kymograph.
    Project(ProjectArgs),
    /// Generate events and ground truth for a rigid synthetic scene.
    Synth(SynthArgs),
    /// Estimate a trajectory from events or fit one to correspondences.
    Fit(FitArgs),
    /// Derive flow, motion-in-depth and scene flow from a trajectory.
    Motion(MotionArgs),
    /// Compare predicted flow and motion-in-depth against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// Pick by extension: `.bin` is RAW_BIN, anything else CSV.
    Auto,
    Csv,
    Bin,
}

#[derive(Debug, Args)]
struct EventInput {
    /// Event file (CSV or RAW_BIN).
    #[arg(long)]
    events: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    /// Sensor height in pixels.
    #[arg(long)]
    height: usize,
    /// Sensor width in pixels.
    #[arg(long)]
    width: usize,
    /// Reject out-of-order timestamps instead of sorting.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct ProjectionParams {
    /// Voxel bins B.
    #[arg(long, default_value_t = emotive::projection::DEFAULT_VOXEL_BINS)]
    bins: usize,
    /// Kymograph time bins T.
    #[arg(long, default_value_t = emotive::projection::DEFAULT_TIME_BINS)]
    t_bins: usize,
    /// Gaussian scale in time bins.
    #[arg(long, default_value_t = emotive::projection::DEFAULT_SIGMA)]
    sigma: f64,
    /// Temporal blocks N_a.
    #[arg(long, default_value_t = emotive::projection::DEFAULT_ANCHORS)]
    n_a: usize,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[command(flatten)]
    input: EventInput,
    #[command(flatten)]
    params: ProjectionParams,
    /// Output prefix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene configuration JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Control points of the reference knot vector written with the correspondences.
    #[arg(long, default_value_t = emotive::nurbs::DEFAULT_CONTROL_POINTS)]
    n: usize,
    /// Degree of the reference knot vector.
    #[arg(long, default_value_t = emotive::nurbs::DEFAULT_DEGREE)]
    p: usize,
    /// Correspondence times per point, spaced evenly in (0, 1].
    #[arg(long, default_value_t = 8)]
    samples: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Event file; required unless `--lsq` is given.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    strict: bool,
    /// Fit to a correspondence JSON by least squares instead of refining.
    #[arg(long)]
    lsq: Option<PathBuf>,
    /// Ground-truth prefix; `<gt>_flow.flo` scores every iteration.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    params: ProjectionParams,
    /// Control points n.
    #[arg(long, default_value_t = emotive::nurbs::DEFAULT_CONTROL_POINTS)]
    n: usize,
    /// Curve degree p.
    #[arg(long, default_value_t = emotive::nurbs::DEFAULT_DEGREE)]
    p: usize,
    /// Cost pyramid levels.
    #[arg(long, default_value_t = emotive::correlation::DEFAULT_LEVELS)]
    levels: usize,
    /// Lookup radius r.
    #[arg(long, default_value_t = emotive::correlation::DEFAULT_RADIUS)]
    radius: usize,
    /// Refinement iterations.
    #[arg(long, default_value_t = emotive::fitting::DEFAULT_ITERS)]
    iters: usize,
    /// Exponential iteration weight of the losses.
    #[arg(long, default_value_t = emotive::fitting::DEFAULT_GAMMA)]
    gamma: f64,
    /// Temporal regularization weight.
    #[arg(long, default_value_t = emotive::fitting::DEFAULT_LAMBDA)]
    lambda: f64,
    /// Sensor pixels per trajectory grid cell.
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    /// Updater step size.
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Updater per-iteration clip in pixels.
    #[arg(long, default_value_t = 2.0)]
    clip: f64,
    /// Least-squares smoothness weight.
    #[arg(long, default_value_t = 0.0)]
    smoothness: f64,
    /// Least-squares ridge for singular pixels.
    #[arg(long, default_value_t = emotive::fitting::DEFAULT_RIDGE)]
    ridge: f64,
}

#[derive(Debug, Args)]
struct MotionArgs {
    /// Trajectory container.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Query times in [0, 1]; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    tau: Vec<f64>,
    /// Aggregate motion-in-depth over several views.
    #[arg(long)]
    multiview: bool,
    /// Views per estimate with `--multiview`, at `j / views * tau`.
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// Output height; defaults to the trajectory grid.
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Flow magnitude that saturates the color wheel; defaults to the 98th percentile.
    #[arg(long)]
    max_flow: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Prediction prefix with `_flow.flo` and `_mid.emok`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth prefix with `_flow.flo` and `_mid.emok`.
    #[arg(long)]
    gt: PathBuf,
    /// Report prefix; defaults to the prediction prefix.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Project(a) => commands::project(a),
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::Motion(a) => commands::motion(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
