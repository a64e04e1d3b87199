//! The full experiment suite for one task.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use vrfm_core::metrics::{
    aggregate_rows, crossing_pairs, planar_paths, write_metric_csv, AmbiguityReport, AmbiguitySource, MetricRow,
    SeedTag,
};
use vrfm_core::ode::{write_trajectories_csv, Trajectory};
use vrfm_core::plot::{line_chart, paths_chart, Series};
use vrfm_core::training::Objective;

use super::ambiguity::run_ambiguity;
use super::evaluate::{evaluate_checkpoints, METRICS_FILE};
use super::sample::{draw_starts, solver_paths};
use super::train::{train_run, TrainedRun, CONFIG_FILE};
use super::{write_text, write_with};
use crate::config::ExperimentConfig;
use crate::{stream_rng, streams, CliError};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CROSSINGS_FILE: &str = "crossings.csv";
pub const CORRELATION_FILE: &str = "ambiguity_correlation.csv";
pub const OBJECTIVES: [Objective; 2] = [Objective::Rfm, Objective::Vrfm];

#[derive(Clone, Debug)]
pub struct CrossingCount {
    pub method: Objective,
    pub paths: usize,
    pub pairs: usize,
}

#[derive(Clone, Debug)]
pub struct ReproduceSummary {
    pub root: PathBuf,
    /// Training cells ordered by objective then seed.
    pub runs: Vec<TrainedRun>,
    /// Per-seed rows followed by mean and std rows.
    pub metrics: Vec<MetricRow>,
    /// Ground truth, baseline and variational maps.
    pub ambiguity: Vec<AmbiguityReport>,
    pub crossings: Vec<CrossingCount>,
    pub trajectories: Vec<(Objective, Vec<Trajectory>)>,
}

/// Trains every (objective, seed) cell on up to `jobs` threads.
fn train_cells(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<TrainedRun>, CliError> {
    let cells: Vec<(Objective, u64)> = OBJECTIVES
        .iter()
        .flat_map(|&o| cfg.seeds.iter().map(move |&s| (o, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<TrainedRun, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(objective, seed)) = cells.get(i) else { break };
                let run = train_run(cfg, objective, seed);
                results.lock().expect("no poisoned workers")[i] = Some(run);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

fn metric_charts(rows: &[MetricRow]) -> Vec<(&'static str, String)> {
    let means: Vec<&MetricRow> = rows.iter().filter(|r| r.seed == SeedTag::Mean).collect();
    let metrics: [(&str, &str, fn(&MetricRow) -> f64); 3] = [
        ("true_ll.svg", "true log-likelihood", |r| r.true_ll),
        ("parzen_ll.svg", "Parzen log-likelihood", |r| r.parzen_ll),
        ("wasserstein.svg", "Wasserstein distance", |r| r.wasserstein),
    ];
    metrics
        .iter()
        .map(|&(file, label, get)| {
            let series: Vec<Series<'_>> = OBJECTIVES
                .iter()
                .map(|o| Series {
                    name: o.name(),
                    points: means
                        .iter()
                        .filter(|r| r.method == o.name())
                        .filter_map(|r| r.steps.parse::<f64>().ok().map(|s| (s, get(r))))
                        .collect(),
                })
                .collect();
            (file, line_chart(label, "Euler steps", label, &series))
        })
        .collect()
}

/// Trains baseline and variational models for every seed, evaluates them,
/// maps velocity ambiguity and exports trajectories for the crossing test.
/// A failing stage halts the suite; earlier artifacts stay on disk.
pub fn cmd_reproduce(cfg: &ExperimentConfig, jobs: usize) -> Result<ReproduceSummary, CliError> {
    cfg.validate()?;
    let root = cfg.output_root().join(cfg.task.name());
    write_text(&root.join(CONFIG_FILE), &cfg.canonical_json()).map_err(CliError::in_stage("setup"))?;

    let runs = train_cells(cfg, jobs).map_err(CliError::in_stage("train"))?;

    let evaluate = || -> Result<Vec<MetricRow>, CliError> {
        let ckpts: Vec<_> = runs.iter().map(|r| r.checkpoint.clone()).collect();
        let mut rows = evaluate_checkpoints(&ckpts, &cfg.evaluation)?;
        let aggregates = aggregate_rows(&rows);
        write_with(&root.join(SUMMARY_FILE), |w| Ok(write_metric_csv(w, &aggregates)?))?;
        rows.extend(aggregates);
        write_with(&root.join(METRICS_FILE), |w| Ok(write_metric_csv(w, &rows)?))?;
        for (file, svg) in metric_charts(&rows) {
            write_text(&root.join(file), &svg)?;
        }
        Ok(rows)
    };
    let metrics = evaluate().map_err(CliError::in_stage("evaluate"))?;

    let seed = cfg.seeds[0];
    let first = |o: Objective| runs.iter().find(|r| r.checkpoint.objective == o && r.checkpoint.seed() == seed);
    let (Some(rfm), Some(vrfm)) = (first(Objective::Rfm), first(Objective::Vrfm)) else {
        unreachable!("every objective is trained for the first seed");
    };

    let ambiguity = || -> Result<Vec<AmbiguityReport>, CliError> {
        let (source, target) = cfg.specs();
        let dir = root.join("ambiguity");
        let reports = vec![
            run_ambiguity(
                AmbiguitySource::GroundTruth {
                    source: &source,
                    target: &target,
                },
                &cfg.ambiguity,
                seed,
                &dir.join("ground_truth"),
                true,
            )?,
            run_ambiguity(
                AmbiguitySource::Model(&rfm.checkpoint.velocity),
                &cfg.ambiguity,
                seed,
                &dir.join("model_rfm"),
                true,
            )?,
            run_ambiguity(
                AmbiguitySource::Model(&vrfm.checkpoint.velocity),
                &cfg.ambiguity,
                seed,
                &dir.join("model_vrfm"),
                true,
            )?,
        ];
        write_with(&root.join(CORRELATION_FILE), |w| {
            writeln!(w, "source,pearson_r,masked_fraction")?;
            for r in &reports {
                let corr = r.correlation_with(&reports[0]).map_or(String::new(), |c| c.to_string());
                writeln!(w, "{},{corr},{}", r.source, r.masked_fraction())?;
            }
            Ok(())
        })?;
        Ok(reports)
    };
    let ambiguity = ambiguity().map_err(CliError::in_stage("ambiguity"))?;

    let export = || -> Result<(Vec<CrossingCount>, Vec<(Objective, Vec<Trajectory>)>), CliError> {
        let ev = &cfg.evaluation;
        let dir = root.join("trajectories");
        let mut counts = Vec::new();
        let mut all = Vec::new();
        let mut chart = Vec::new();
        for run in [rfm, vrfm] {
            let model = &run.checkpoint.velocity;
            // Identical starts for both models; only the latent draws differ.
            let mut rng = stream_rng(ev.seed, streams::TRAJECTORIES);
            let (x0, z) = draw_starts(model, &run.checkpoint.source, ev.trajectories, ev.latent_sharing, &mut rng)?;
            let solver = vrfm_core::ode::SolverConfig::euler(ev.trajectory_steps);
            let trajs = solver_paths(model, &x0, z.as_ref(), &solver)?;
            let objective = run.checkpoint.objective;
            write_with(&dir.join(format!("{}.csv", objective.name())), |w| {
                Ok(write_trajectories_csv(w, &trajs)?)
            })?;
            let mut planar = Vec::new();
            for t in &trajs {
                planar.extend(planar_paths(t)?);
            }
            counts.push(CrossingCount {
                method: objective,
                paths: planar.len(),
                pairs: crossing_pairs(&planar).len(),
            });
            chart.push((
                objective.name(),
                planar
                    .iter()
                    .map(|p| p.iter().map(|q| (q[0], q[1])).collect())
                    .collect::<Vec<Vec<(f64, f64)>>>(),
            ));
            all.push((objective, trajs));
        }
        let (xl, yl) = if cfg.task.data_dim() == 1 { ("t", "x") } else { ("x0", "x1") };
        write_text(&dir.join("paths.svg"), &paths_chart("trajectories", xl, yl, &chart))?;
        write_with(&root.join(CROSSINGS_FILE), |w| {
            writeln!(w, "method,paths,crossing_pairs")?;
            for c in &counts {
                writeln!(w, "{},{},{}", c.method, c.paths, c.pairs)?;
            }
            Ok(())
        })?;
        Ok((counts, all))
    };
    let (crossings, trajectories) = export().map_err(CliError::in_stage("trajectories"))?;

    Ok(ReproduceSummary {
        root,
        runs,
        metrics,
        ambiguity,
        crossings,
        trajectories,
    })
}
