//! Experiment configuration: one JSON document per experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vrfm_core::distributions::{Builtin, DistributionSpec, DEFAULT_MODE_STD_1D, DEFAULT_MODE_STD_2D};
use vrfm_core::metrics::{AmbiguityConfig, ParzenConfig, DEFAULT_PROJECTIONS};
use vrfm_core::models::{ConditionInput, PosteriorConfig, VelocityModelConfig};
use vrfm_core::ode::{Dopri5Config, LatentSharing, SolverConfig};
use vrfm_core::training::{Objective, TrainConfig};

use crate::CliError;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "VRFM_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "synthetic_1d")]
    Synthetic1d,
    #[serde(rename = "synthetic_2d")]
    Synthetic2d,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Synthetic1d => "synthetic_1d",
            Task::Synthetic2d => "synthetic_2d",
        }
    }

    pub fn data_dim(self) -> usize {
        match self {
            Task::Synthetic1d => 1,
            Task::Synthetic2d => 2,
        }
    }

    pub fn default_latent_dim(self) -> usize {
        match self {
            Task::Synthetic1d => 4,
            Task::Synthetic2d => 8,
        }
    }

    pub fn default_kl_weight(self) -> f64 {
        match self {
            Task::Synthetic1d => 1.0,
            Task::Synthetic2d => 0.1,
        }
    }

    pub fn default_mode_std(self) -> f64 {
        match self {
            Task::Synthetic1d => DEFAULT_MODE_STD_1D,
            Task::Synthetic2d => DEFAULT_MODE_STD_2D,
        }
    }

    fn builtins(self) -> (Builtin, Builtin) {
        match self {
            Task::Synthetic1d => (Builtin::Source1d, Builtin::Target1dBimodal),
            Task::Synthetic2d => (Builtin::Source2dCircle, Builtin::Target2dCircle),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic_1d" => Ok(Task::Synthetic1d),
            "synthetic_2d" => Ok(Task::Synthetic2d),
            other => Err(format!("unknown task `{other}` (expected synthetic_1d or synthetic_2d)")),
        }
    }
}

/// Source and target distributions; builtins for the task when absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Component std of the task's builtin mixtures.
    pub mode_std: Option<f64>,
    pub source: Option<DistributionSpec>,
    pub target: Option<DistributionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Task default when absent; unused by the classic objective.
    pub latent_dim: Option<usize>,
    pub latent_hidden: usize,
    pub decoder_layers: usize,
    pub max_period: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let v = VelocityModelConfig::new(1, 0);
        Self {
            hidden_dim: v.hidden_dim,
            embed_dim: v.embed_dim,
            latent_dim: None,
            latent_hidden: v.latent_hidden,
            decoder_layers: v.decoder_layers,
            max_period: v.max_period,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorSection {
    pub conditioning: Vec<ConditionInput>,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for PosteriorSection {
    fn default() -> Self {
        let p = PosteriorConfig::new(1, 1);
        Self {
            conditioning: p.conditioning,
            hidden_dim: p.hidden_dim,
            embed_dim: p.embed_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Task default when absent.
    pub kl_weight: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Objective::Vrfm);
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.lr,
            weight_decay: t.weight_decay,
            kl_weight: None,
            log_every: t.log_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Euler step counts of the sweep.
    pub steps: Vec<usize>,
    /// Whether the sweep includes the adaptive solver.
    pub adaptive: bool,
    pub dopri5: Dopri5Config,
    pub n_generated: usize,
    pub n_test: usize,
    pub parzen: ParzenConfig,
    pub projections: usize,
    /// Seed of the held-out test set and projections shared by all runs.
    pub seed: u64,
    pub latent_sharing: LatentSharing,
    /// Paths exported for the crossing analysis.
    pub trajectories: usize,
    pub trajectory_steps: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            steps: vec![2, 5, 10, 50, 100],
            adaptive: true,
            dopri5: Dopri5Config::default(),
            n_generated: 10_000,
            n_test: 10_000,
            parzen: ParzenConfig::default(),
            projections: DEFAULT_PROJECTIONS,
            seed: 1234,
            latent_sharing: LatentSharing::PerTrajectory,
            trajectories: 200,
            trajectory_steps: 100,
        }
    }
}

impl EvaluationConfig {
    /// Solver settings of the sweep in order.
    pub fn solvers(&self) -> Vec<SolverConfig> {
        let mut out: Vec<SolverConfig> = self.steps.iter().map(|&s| SolverConfig::euler(s)).collect();
        if self.adaptive {
            out.push(SolverConfig::Dopri5(self.dopri5.clone()));
        }
        out
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_objective() -> Objective {
    Objective::Vrfm
}

/// Full experiment description. Every field except `task` has a default and
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub posterior: PosteriorSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub ambiguity: AmbiguityConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for a task.
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            objective: default_objective(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            posterior: PosteriorSection::default(),
            train: TrainSection::default(),
            evaluation: EvaluationConfig::default(),
            ambiguity: AmbiguityConfig::default(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        }
    }

    /// Parses JSON; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills every task-dependent default so the document is self-contained.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let (source, target) = self.specs();
        out.data = DataConfig {
            mode_std: None,
            source: Some(source),
            target: Some(target),
        };
        out.model.latent_dim = Some(self.latent_dim());
        out.train.kl_weight = Some(self.kl_weight());
        out
    }

    /// Canonical pretty JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.resolved()).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let dim = self.task.data_dim();
        if let Some(std) = self.data.mode_std {
            if !(std > 0.0 && std.is_finite()) {
                return bad(format!("data.mode_std: must be positive, got {std}"));
            }
        }
        for (name, spec) in [("data.source", &self.data.source), ("data.target", &self.data.target)] {
            if let Some(spec) = spec {
                if let Err(e) = spec.validate() {
                    return bad(format!("{name}: {e}"));
                }
                if spec.dim != dim {
                    return bad(format!("{name}: dim {} does not match task {}", spec.dim, self.task));
                }
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if let Err(e) = self.velocity_config(self.objective).validate() {
            return bad(format!("model: {e}"));
        }
        if self.latent_dim() == 0 && self.objective == Objective::Vrfm {
            return bad("model.latent_dim: the variational objective needs a latent".into());
        }
        if let Err(e) = self.posterior_config().validate() {
            return bad(format!("posterior: {e}"));
        }
        if let Err(e) = self.train_config(self.objective, 0).validate() {
            return bad(format!("train: {e}"));
        }
        let ev = &self.evaluation;
        if ev.steps.iter().any(|&s| s == 0) {
            return bad("evaluation.steps: step counts must be positive".into());
        }
        if let Err(e) = ev.dopri5.validate() {
            return bad(format!("evaluation.dopri5: {e}"));
        }
        if ev.n_generated < 10 || ev.n_test == 0 {
            return bad("evaluation: need at least 10 generated and 1 test sample".into());
        }
        if ev.projections == 0 || ev.trajectory_steps == 0 {
            return bad("evaluation: projections and trajectory_steps must be positive".into());
        }
        let p = &ev.parzen;
        if !(p.min_bandwidth > 0.0 && p.max_bandwidth >= p.min_bandwidth && p.grid_points > 0) {
            return bad("evaluation.parzen: invalid bandwidth grid".into());
        }
        if !(p.validation_fraction > 0.0 && p.validation_fraction < 1.0) {
            return bad("evaluation.parzen.validation_fraction: must lie in (0, 1)".into());
        }
        if let Err(e) = self.ambiguity.validate() {
            return bad(format!("ambiguity: {e}"));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim.unwrap_or(self.task.default_latent_dim())
    }

    pub fn kl_weight(&self) -> f64 {
        self.train.kl_weight.unwrap_or(self.task.default_kl_weight())
    }

    /// Source and target distributions.
    pub fn specs(&self) -> (DistributionSpec, DistributionSpec) {
        let (src, tgt) = self.task.builtins();
        let std = self.data.mode_std.unwrap_or(self.task.default_mode_std());
        let source = self.data.source.clone().unwrap_or_else(|| match self.task {
            // The 1D source is the unit Gaussian regardless of mode width.
            Task::Synthetic1d => src.spec(),
            Task::Synthetic2d => src.spec().with_component_std(std),
        });
        let target = self
            .data
            .target
            .clone()
            .unwrap_or_else(|| tgt.spec().with_component_std(std));
        (source, target)
    }

    pub fn velocity_config(&self, objective: Objective) -> VelocityModelConfig {
        let m = &self.model;
        VelocityModelConfig {
            data_dim: self.task.data_dim(),
            hidden_dim: m.hidden_dim,
            embed_dim: m.embed_dim,
            latent_dim: match objective {
                Objective::Rfm => 0,
                Objective::Vrfm => self.latent_dim(),
            },
            latent_hidden: m.latent_hidden,
            decoder_layers: m.decoder_layers,
            max_period: m.max_period,
        }
    }

    pub fn posterior_config(&self) -> PosteriorConfig {
        let p = &self.posterior;
        PosteriorConfig {
            conditioning: p.conditioning.clone(),
            hidden_dim: p.hidden_dim,
            embed_dim: p.embed_dim,
            max_period: self.model.max_period,
            ..PosteriorConfig::new(self.task.data_dim(), self.latent_dim().max(1))
        }
    }

    pub fn train_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            objective,
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr: t.learning_rate,
            weight_decay: t.weight_decay,
            kl_weight: self.kl_weight(),
            seed,
            log_every: t.log_every,
        }
    }

    /// Output root, honouring the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    /// `<root>/<task>/<objective>/<seed>`.
    pub fn run_dir(&self, objective: Objective, seed: u64) -> PathBuf {
        self.output_root()
            .join(self.task.name())
            .join(objective.name())
            .join(seed.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_task_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"task": "synthetic_2d"}"#).unwrap();
        assert_eq!(cfg.latent_dim(), 8);
        assert_eq!(cfg.kl_weight(), 0.1);
        assert_eq!(cfg.objective, Objective::Vrfm);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        let cfg = ExperimentConfig::from_json(r#"{"task": "synthetic_1d"}"#).unwrap();
        assert_eq!(cfg.latent_dim(), 4);
        assert_eq!(cfg.kl_weight(), 1.0);
        assert_eq!(cfg.train.iterations, 20_000);
        assert_eq!(cfg.train.batch_size, 1000);
    }

    #[test]
    fn unknown_key_is_named_with_path() {
        let err = ExperimentConfig::from_json(r#"{"task": "synthetic_1d", "train": {"learning_rat": 0.1}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("learning_rat"), "{err}");
        assert!(err.contains("train"), "{err}");
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = ExperimentConfig::from_json(r#"{"task": "synthetic_2d", "data": {"mode_std": 0.2}}"#).unwrap();
        let text = cfg.canonical_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg.resolved());
        assert_eq!(back.canonical_json(), text);
        assert_eq!(back.specs(), cfg.specs());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"task": "synthetic_3d"}"#,
            r#"{"task": "synthetic_1d", "seeds": []}"#,
            r#"{"task": "synthetic_1d", "train": {"batch_size": 0}}"#,
            r#"{"task": "synthetic_1d", "model": {"embed_dim": 3}}"#,
            r#"{"task": "synthetic_1d", "evaluation": {"steps": [0]}}"#,
            r#"{"task": "synthetic_1d", "data": {"mode_std": -1}}"#,
            r#"{}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn run_dir_layout() {
        let mut cfg = ExperimentConfig::for_task(Task::Synthetic1d);
        cfg.output_dir = PathBuf::from("/tmp/x");
        if std::env::var_os(OUTPUT_ROOT_ENV).is_none() {
            assert_eq!(cfg.run_dir(Objective::Rfm, 2), PathBuf::from("/tmp/x/synthetic_1d/rfm/2"));
        }
    }
}
