//! Config-driven runs: every subcommand of the `qdt` binary lives here so
//! it can be driven from tests and the C API as well.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    compute_b, gamma_membership, kernel_range_condition, min_mse_value, similarity_check, RangeVerdict,
    SimilarityVerdict, PROB_CLAMP,
};
use crate::config::{Allocation, ExperimentConfig, SCHEMA_VERSION};
use crate::correction::CorrectionSummary;
use crate::design::{optimize_distribution, ResourceDistribution, DEFAULT_TOL};
use crate::detector::{Povm, PovmJson};
use crate::error::{QdtError, Result};
use crate::estimators::{msem_reports, EstimateRecord};
use crate::kernels::{cross_validate, kernel_grid, materialize, CvOutcome, CvSplit, KernelSpec};
use crate::linalg::{set_cond_limit, RMat, RANK_RTOL};
use crate::measurement::{born_probabilities, build_weighted_data, sample_counts, MeasurementRecord, WeightPolicy};
use crate::rng::{stage, stream};
use crate::scaling::{
    allocate, estimate_and_score, fmt12, mean_std, resolve_kernel, scaling_study, trial_key, EstimatorSpec,
    ScalingSetup, ScalingTable, Weighting,
};
use crate::states::ProbeSet;

/// Everything a run needs after the config has been resolved.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub detector: Povm,
    pub probes: ProbeSet,
    /// Shot fractions; `None` is uniform.
    pub eta: Option<Vec<f64>>,
    pub design: Option<ResourceDistribution>,
}

/// `1 / (p - p^2)` from the true detector, the weights of the A-optimal design.
pub fn design_weights(p: &RMat) -> RMat {
    p.map(|x| {
        let q = x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        1.0 / (q - q * q)
    })
}

/// Optimized fractions for `probes` against `detector`. A stalled solver
/// still hands back its best iterate.
pub fn optimize_for(probes: &ProbeSet, detector: &Povm) -> Result<ResourceDistribution> {
    let w = design_weights(&born_probabilities(detector, probes)?);
    optimize_distribution(&probes.x, Some(&w), DEFAULT_TOL)
}

pub fn resolve(config: ExperimentConfig) -> Result<Resolved> {
    config.validate()?;
    if let Some(l) = config.cond_limit {
        set_cond_limit(l);
    }
    let detector = config.load_detector()?;
    let probes = config.build_probes(&detector)?;
    let m = probes.len();
    let (eta, design) = match &config.shots.allocation {
        Allocation::Uniform => (None, None),
        Allocation::Explicit(f) => {
            if f.len() != m {
                return Err(QdtError::InvalidConfig(format!(
                    "explicit allocation has {} entries for {m} probes",
                    f.len()
                )));
            }
            (Some(f.clone()), None)
        }
        Allocation::Optimized => {
            let d = optimize_for(&probes, &detector)?;
            (Some(d.eta.clone()), Some(d))
        }
    };
    if eta.is_none() && config.shots.total < m as u64 {
        return Err(QdtError::InvalidConfig(format!(
            "N = {} is smaller than the {m} probes",
            config.shots.total
        )));
    }
    Ok(Resolved {
        config,
        detector,
        probes,
        eta,
        design,
    })
}

impl Resolved {
    pub fn shots(&self, total: u64) -> Result<Vec<u64>> {
        allocate(self.eta.as_deref(), self.probes.len(), total)
    }

    /// Counts for trial `trial` at the configured total.
    pub fn simulate(&self, trial: usize) -> Result<MeasurementRecord> {
        let p = born_probabilities(&self.detector, &self.probes)?;
        let shots = self.shots(self.config.shots.total)?;
        let mut rng = stream(self.config.seed, trial_key(0, trial), stage::SAMPLING);
        sample_counts(&p, &shots, &mut rng)
    }

    fn setup(&self, estimators: Vec<EstimatorSpec>, n_grid: Vec<u64>) -> ScalingSetup<'_> {
        ScalingSetup {
            probes: &self.probes,
            truth: &self.detector,
            estimators,
            n_grid,
            trials: self.config.trials,
            seed: self.config.seed,
            eta: self.eta.clone(),
            record_timing: self.config.record_timing,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub qdt_version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

fn write_manifest(out: &Path, cmd: &str, cfg: &ExperimentConfig, outputs: &[&str]) -> Result<()> {
    let m = Manifest {
        schema_version: SCHEMA_VERSION,
        qdt_version: env!("CARGO_PKG_VERSION"),
        subcommand: cmd.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&out.join("manifest.json"), &m)
}

#[derive(Debug, Serialize)]
pub struct EstimateBundle {
    pub estimator: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub trial: usize,
    pub records: Vec<EstimateRecord>,
    pub corrected: PovmJson,
    pub correction: CorrectionSummary,
    pub final_mse: f64,
}

#[derive(Debug, Serialize)]
pub struct SummaryEntry {
    pub estimator: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub trials: usize,
    pub failures: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub std_error: f64,
    pub range_condition: bool,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub detector: String,
    pub probes: usize,
    pub informationally_complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<ResourceDistribution>,
    pub results: Vec<SummaryEntry>,
}

fn detector_label(cfg: &ExperimentConfig) -> String {
    match &cfg.detector {
        crate::config::DetectorSource::Name(n) => n.clone(),
        crate::config::DetectorSource::File { file } => file.display().to_string(),
    }
}

/// Exact trace MSEM per outcome under oracle weights, when a closed form exists.
fn oracle_traces(r: &Resolved, spec: &EstimatorSpec, record: &MeasurementRecord) -> Option<Vec<f64>> {
    let thetas = r.detector.thetas(&r.probes.basis).ok()?;
    let p = born_probabilities(&r.detector, &r.probes).ok()?;
    let policy = match spec.weighting {
        Weighting::Uniform => WeightPolicy::Uniform,
        _ => WeightPolicy::Oracle(p),
    };
    let wd = build_weighted_data(record, &r.probes, &policy).ok()?;
    let kernel = resolve_kernel(&spec.kernel, &thetas);
    let reps = msem_reports(&wd, &kernel, &thetas).ok()?;
    Some(reps.iter().map(|x| x.trace).collect())
}

fn single_estimate(r: &Resolved, spec: &EstimatorSpec, record: &MeasurementRecord, trial: usize) -> Result<EstimateBundle> {
    let te = estimate_and_score(&r.probes, record, &r.detector, spec)?;
    let traces = oracle_traces(r, spec, record);
    Ok(EstimateBundle {
        estimator: spec.label(),
        n: record.total_shots(),
        trial,
        records: te.estimate.to_records(traces.as_deref()),
        corrected: te.correction.corrected.to_json(),
        correction: te.correction.summary(),
        final_mse: te.mse,
    })
}

fn write_trials_csv(path: &Path, table: &ScalingTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "estimator", "N", "mse", "error"])?;
    for t in &table.trials {
        w.write_record([
            t.trial.to_string(),
            t.estimator.clone(),
            t.n.to_string(),
            t.mse.map(fmt12).unwrap_or_default(),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Full pipeline: simulate, estimate, correct and report at the configured
/// N for every trial; adds a scaling table when `N_grid` is present.
pub fn run_pipeline(config: ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let r = resolve(config)?;
    prepare_out(out)?;
    let estimators = r.config.study_estimators();
    let total = r.config.shots.total;
    let table = scaling_study(&r.setup(estimators.clone(), vec![total]))?;
    write_trials_csv(&out.join("mse.csv"), &table)?;
    let mut outputs = vec!["mse.csv", "summary.json", "estimates.json"];

    let record = r.simulate(0)?;
    let bundles: Vec<EstimateBundle> = estimators
        .iter()
        .filter_map(|s| single_estimate(&r, s, &record, 0).ok())
        .collect();
    write_json(&out.join("estimates.json"), &bundles)?;

    if let Some(grid) = r.config.n_grid.clone() {
        let sweep = scaling_study(&r.setup(estimators, grid))?;
        sweep.save_csv(&out.join("scaling.csv"))?;
        outputs.push("scaling.csv");
    }
    let summary = RunSummary {
        detector: detector_label(&r.config),
        probes: r.probes.len(),
        informationally_complete: r.probes.informationally_complete,
        design: r.design.clone(),
        results: table
            .rows
            .iter()
            .map(|row| SummaryEntry {
                estimator: row.kernel.clone(),
                n: row.n,
                trials: row.trials,
                failures: row.failures,
                mean_mse: row.mean_mse,
                std_mse: row.std_mse,
                std_error: row.std_error(),
                range_condition: row.range_condition,
            })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    outputs.push("manifest.json");
    write_manifest(out, "run", &r.config, &outputs)?;
    Ok(summary)
}

/// Writes `record.csv` for trial 0.
pub fn run_simulate(config: ExperimentConfig, out: &Path) -> Result<MeasurementRecord> {
    let r = resolve(config)?;
    prepare_out(out)?;
    let record = r.simulate(0)?;
    record.write_csv(&out.join("record.csv"))?;
    write_manifest(out, "simulate", &r.config, &["record.csv", "manifest.json"])?;
    Ok(record)
}

/// Estimates from a recorded CSV (or simulated trial 0) and writes the
/// corrected detector to `povm.json`.
pub fn run_estimate(config: ExperimentConfig, record: Option<&Path>, out: &Path) -> Result<EstimateBundle> {
    let r = resolve(config)?;
    prepare_out(out)?;
    let rec = match record {
        Some(p) => MeasurementRecord::read_csv(p)?,
        None => r.simulate(0)?,
    };
    let spec = r.config.primary_estimator();
    let bundle = single_estimate(&r, &spec, &rec, 0)?;
    write_json(&out.join("povm.json"), &bundle.corrected)?;
    write_json(&out.join("estimates.json"), &bundle)?;
    write_manifest(out, "estimate", &r.config, &["povm.json", "estimates.json", "manifest.json"])?;
    Ok(bundle)
}

#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub converged: bool,
    pub eta: Vec<f64>,
    pub objective: f64,
    pub uniform_objective: f64,
    pub certificate: f64,
    pub iterations: usize,
    #[serde(rename = "shots")]
    pub shots: Vec<u64>,
}

/// Optimized allocation written to `eta.json`. A solver that stalls still
/// reports its best point with `converged: false`.
pub fn run_optimize(config: ExperimentConfig, out: &Path) -> Result<DesignReport> {
    let r = resolve(config)?;
    prepare_out(out)?;
    let w = design_weights(&born_probabilities(&r.detector, &r.probes)?);
    let problem = crate::design::DesignProblem::new(&r.probes.x, Some(&w))?;
    let m = r.probes.len();
    let uniform = vec![1.0 / m as f64; m];
    let (dist, converged) = match optimize_distribution(&r.probes.x, Some(&w), DEFAULT_TOL) {
        Ok(d) => (d, true),
        Err(QdtError::ConvergenceFailure { iterations, gap, best }) => {
            let objective = problem.objective(&best);
            (
                ResourceDistribution {
                    eta: best,
                    objective,
                    certificate: gap,
                    iterations,
                },
                false,
            )
        }
        Err(e) => return Err(e),
    };
    let report = DesignReport {
        converged,
        shots: crate::design::round_shots(&dist.eta, r.config.shots.total),
        uniform_objective: problem.objective(&uniform),
        eta: dist.eta,
        objective: dist.objective,
        certificate: dist.certificate,
        iterations: dist.iterations,
    };
    write_json(&out.join("eta.json"), &report)?;
    write_manifest(out, "optimize-resources", &r.config, &["eta.json", "manifest.json"])?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct CvReport {
    pub split: CvSplit,
    pub grid: Vec<KernelSpec>,
    pub outcome: CvOutcome,
}

/// Hyper-parameter selection on trial-0 counts (or a recorded CSV).
pub fn run_cross_validate(config: ExperimentConfig, record: Option<&Path>, out: &Path) -> Result<CvReport> {
    let r = resolve(config)?;
    let cv = r
        .config
        .cross_validation
        .clone()
        .ok_or_else(|| QdtError::InvalidConfig("cross_validation section is missing".into()))?;
    prepare_out(out)?;
    let rec = match record {
        Some(p) => MeasurementRecord::read_csv(p)?,
        None => r.simulate(0)?,
    };
    let grid = kernel_grid(&cv.kind, &cv.c, &cv.mu, &cv.mu1)?;
    let mut rng = stream(r.config.seed, 0, stage::CV_SPLIT);
    let split = CvSplit::random(r.probes.len(), cv.n_estimation, &mut rng)?;
    let policy = match r.config.primary_estimator().weighting {
        Weighting::Uniform => WeightPolicy::Uniform,
        _ => WeightPolicy::Empirical,
    };
    let outcome = cross_validate(&r.probes, &rec, &policy, &grid, &split)?;
    let report = CvReport { split, grid, outcome };
    write_json(&out.join("cv.json"), &report)?;
    write_manifest(out, "cross-validate", &r.config, &["cv.json", "manifest.json"])?;
    Ok(report)
}

/// Sweep over `N_grid` for every configured estimator.
pub fn run_scaling(config: ExperimentConfig, out: &Path) -> Result<ScalingTable> {
    let r = resolve(config)?;
    let grid = r
        .config
        .n_grid
        .clone()
        .ok_or_else(|| QdtError::InvalidConfig("scaling-study needs N_grid".into()))?;
    prepare_out(out)?;
    let table = scaling_study(&r.setup(r.config.study_estimators(), grid))?;
    table.save_csv(&out.join("scaling.csv"))?;
    write_trials_csv(&out.join("trials.csv"), &table)?;
    write_manifest(out, "scaling-study", &r.config, &["scaling.csv", "trials.csv", "manifest.json"])?;
    Ok(table)
}

#[derive(Debug, Serialize)]
pub struct OutcomeTheory {
    pub outcome: usize,
    pub rank_b: usize,
    pub range_condition: RangeVerdict,
    /// `None` when the kernel has no matrix or theta is not identifiable.
    pub gamma_member: Option<bool>,
    pub similarity: Option<SimilarityVerdict>,
    pub min_mse: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct TheoryReport {
    pub estimator: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub informationally_complete: bool,
    pub outcomes: Vec<OutcomeTheory>,
}

/// Range, membership and similarity verdicts for the configured kernel on
/// the limiting information matrices.
pub fn run_check_theory(config: ExperimentConfig, out: &Path) -> Result<TheoryReport> {
    let r = resolve(config)?;
    prepare_out(out)?;
    let m = r.probes.len();
    let h = r.eta.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
    let infos = compute_b(&r.probes, &r.detector, &h)?;
    let thetas = r.detector.thetas(&r.probes.basis)?;
    let spec = r.config.primary_estimator();
    let kernel = resolve_kernel(&spec.kernel, &thetas);
    let n = r.config.shots.total as f64;
    let k = r.probes.basis.len();
    let outcomes = infos
        .iter()
        .zip(&thetas)
        .enumerate()
        .map(|(i, (info, theta))| {
            let range_condition = kernel_range_condition(&kernel, theta, &info.b, i, RANK_RTOL)?;
            let s = if kernel.is_adaptive() {
                None
            } else {
                materialize(&kernel, k, i, None, 1.0)?.s
            };
            let gamma_member = s
                .as_ref()
                .and_then(|s| gamma_membership(s, theta, info, 1e-8).ok());
            let similarity = s.as_ref().map(|s| similarity_check(s, &info.b)).transpose()?;
            let min_mse = min_mse_value(theta, &info.b, n).ok();
            Ok(OutcomeTheory {
                outcome: i,
                rank_b: info.rank,
                range_condition,
                gamma_member,
                similarity,
                min_mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = TheoryReport {
        estimator: spec.label(),
        n: r.config.shots.total,
        informationally_complete: r.probes.informationally_complete,
        outcomes,
    };
    write_json(&out.join("theory.json"), &report)?;
    write_manifest(out, "check-theory", &r.config, &["theory.json", "manifest.json"])?;
    Ok(report)
}

/// Output directory: explicit override, else the config's.
pub fn output_dir(cfg: &ExperimentConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone())
}

/// Mean and standard error of the per-trial MSE values of one estimator.
pub fn mse_stats(table: &ScalingTable, estimator: &str, n: u64) -> Option<(f64, f64)> {
    let v: Vec<f64> = table
        .trials
        .iter()
        .filter(|t| t.estimator == estimator && t.n == n)
        .filter_map(|t| t.mse)
        .collect();
    if v.is_empty() {
        return None;
    }
    let (m, s) = mean_std(&v);
    Some((m, s / (v.len() as f64).sqrt()))
}
