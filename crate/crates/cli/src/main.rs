use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vrfm_core::metrics::AmbiguityConfig;
use vrfm_core::ode::{Dopri5Config, LatentSharing, SolverConfig};
use vrfm_core::training::Objective;
use vrfm_cli::config::EvaluationConfig;
use vrfm_cli::{
    cmd_ambiguity, cmd_evaluate, cmd_reproduce, cmd_sample, cmd_train, AmbiguityInput, CliError, ExperimentConfig,
    SampleOptions, Task, OUTPUT_ROOT_ENV,
};

#[derive(Parser)]
#[command(
    name = "vrfm",
    version,
    about = "Variational rectified flow matching on synthetic data",
    after_help = "Set VRFM_OUTPUT_ROOT to override the output directory of every command."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one objective for the configured seeds.
    Train {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's objective.
        #[arg(long)]
        objective: Option<Objective>,
        /// Train only these seeds (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
    },
    /// Generate samples from a checkpoint.
    Sample(SampleArgs),
    /// Evaluate checkpoints over the solver sweep.
    Evaluate {
        /// Checkpoint files.
        #[arg(long = "checkpoint", num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        /// Experiment config supplying evaluation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Map velocity ambiguity from the analytic coupling or a checkpoint.
    Ambiguity {
        /// `ground-truth` or a checkpoint path.
        #[arg(long)]
        source: String,
        /// Task for the ground-truth source when no config is given.
        #[arg(long, default_value = "synthetic_1d")]
        task: Task,
        /// Experiment config supplying distributions and grid settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Skip the SVG heatmap.
        #[arg(long)]
        no_svg: bool,
    },
    /// Train, evaluate and analyse both objectives over all seeds.
    Reproduce {
        #[arg(long, default_value = "synthetic_1d")]
        task: Task,
        /// Experiment config; overrides --task.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Concurrent training cells; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Euler steps.
    #[arg(long, conflicts_with = "adaptive")]
    steps: Option<usize>,
    /// Use the adaptive Dormand-Prince solver.
    #[arg(long)]
    adaptive: bool,
    /// Relative and absolute tolerance of the adaptive solver.
    #[arg(long, requires = "adaptive")]
    tolerance: Option<f64>,
    /// Export solver paths of this many leading samples.
    #[arg(long, default_value_t = 0)]
    trajectories: usize,
    /// One latent draw shared by every trajectory.
    #[arg(long)]
    shared_latent: bool,
    /// Sampling seed; defaults to the checkpoint's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn default_out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            objective,
            seeds,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = objective {
                cfg.objective = o;
            }
            let runs = cmd_train(&cfg, (!seeds.is_empty()).then_some(seeds.as_slice()))?;
            for r in runs {
                println!("{}", r.dir.display());
            }
        }
        Command::Sample(a) => {
            let solver = match (a.steps, a.adaptive) {
                (_, true) => SolverConfig::Dopri5(match a.tolerance {
                    Some(t) => Dopri5Config::with_tolerance(t),
                    None => Dopri5Config::default(),
                }),
                (Some(s), false) => SolverConfig::euler(s),
                (None, false) => return Err(CliError::Usage("pass --steps N or --adaptive".into())),
            };
            let opts = SampleOptions {
                n: a.n,
                solver,
                trajectories: a.trajectories,
                latent_sharing: if a.shared_latent {
                    LatentSharing::Shared
                } else {
                    LatentSharing::PerTrajectory
                },
                seed: a.seed,
                out_dir: default_out_dir(a.out_dir),
            };
            let report = cmd_sample(&a.checkpoint, &opts)?;
            println!("mean nfe {}", report.mean_nfe);
        }
        Command::Evaluate {
            checkpoints,
            config,
            out_dir,
        } => {
            let ev = match config {
                Some(p) => ExperimentConfig::load(&p)?.evaluation,
                None => EvaluationConfig::default(),
            };
            let out_dir = default_out_dir(out_dir);
            cmd_evaluate(&checkpoints, &ev, &out_dir)?;
            println!("{}", out_dir.join(vrfm_cli::commands::evaluate::METRICS_FILE).display());
        }
        Command::Ambiguity {
            source,
            task,
            config,
            seed,
            out_dir,
            no_svg,
        } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::for_task(task),
            };
            let input = if source == "ground-truth" {
                let (source, target) = cfg.specs();
                AmbiguityInput::GroundTruth { source, target }
            } else {
                AmbiguityInput::Checkpoint(PathBuf::from(source))
            };
            let grid: &AmbiguityConfig = &cfg.ambiguity;
            let report = cmd_ambiguity(&input, grid, seed, &default_out_dir(out_dir), !no_svg)?;
            println!("masked fraction {}", report.masked_fraction());
        }
        Command::Reproduce { task, config, jobs } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::for_task(task),
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let summary = cmd_reproduce(&cfg, jobs)?;
            println!("{}", summary.root.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
