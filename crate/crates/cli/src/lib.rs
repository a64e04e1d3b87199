//! Command-line orchestration for variational rectified flow matching:
//! configuration, training runs, sampling, evaluation sweeps and artifacts.

pub mod commands;
pub mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use vrfm_core::distributions::DistError;
use vrfm_core::metrics::MetricError;
use vrfm_core::ode::OdeError;
use vrfm_core::training::{CheckpointError, TrainError};

pub use commands::ambiguity::{cmd_ambiguity, run_ambiguity, AmbiguityInput};
pub use commands::evaluate::{cmd_evaluate, evaluate_checkpoints};
pub use commands::reproduce::{cmd_reproduce, ReproduceSummary};
pub use commands::sample::{cmd_sample, SampleOptions, SampleReport};
pub use commands::train::{cmd_train, train_run, TrainedRun};
pub use config::{ExperimentConfig, Task, OUTPUT_ROOT_ENV};

/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for runtime and numeric failures.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(CliError) -> CliError {
        move |e| CliError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(TrainError, OdeError, MetricError, DistError, CheckpointError, std::io::Error, serde_json::Error);

/// Random streams derived from a seed. Training owns streams 0 and 1.
pub mod streams {
    pub const SAMPLE: u64 = 2;
    pub const TEST_SET: u64 = 3;
    pub const PROJECTIONS: u64 = 4;
    pub const AMBIGUITY: u64 = 5;
    pub const TRAJECTORIES: u64 = 6;
}

/// ChaCha8 generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
