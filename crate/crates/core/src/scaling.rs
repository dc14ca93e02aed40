//! Monte Carlo sweeps of the final MSE over shot counts and estimators.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{compute_b, fit_slope, kernel_range_condition, InfoMatrix};
use crate::basis::BasisLayout;
use crate::correction::{correct_blockwise, correct_to_povm, CorrectionResult};
use crate::design::round_shots;
use crate::detector::Povm;
use crate::error::{shape_err, QdtError, Result};
use crate::estimators::{rwls_estimate, Estimate};
use crate::kernels::KernelSpec;
use crate::linalg::{RVec, RANK_RTOL};
use crate::measurement::{born_probabilities, build_weighted_data, sample_counts, MeasurementRecord, WeightPolicy};
use crate::rng::{stage, stream};
use crate::states::ProbeSet;

/// How regression weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Estimated from the observed frequencies.
    #[default]
    Empirical,
    /// Exact weights from the true detector (simulation only).
    Oracle,
    /// Equal weights: ordinary least squares.
    Uniform,
}

/// One estimator in a study. `kernel: none` with empirical weights is the
/// adaptive WLS estimator, with uniform weights plain LS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub weighting: Weighting,
}

impl EstimatorSpec {
    pub fn new(kernel: KernelSpec, weighting: Weighting) -> Self {
        Self {
            label: None,
            kernel,
            weighting,
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.weighting {
            Weighting::Empirical => self.kernel.name().to_string(),
            Weighting::Oracle => format!("{}_oracle_weights", self.kernel.name()),
            Weighting::Uniform => format!("{}_ls", self.kernel.name()),
        }
    }
}

/// Fills an unset oracle kernel with the true parameters.
pub fn resolve_kernel(kernel: &KernelSpec, true_thetas: &[RVec]) -> KernelSpec {
    match kernel {
        KernelSpec::BestOracle { theta: None } => KernelSpec::BestOracle {
            theta: Some(true_thetas.iter().map(|t| t.as_slice().to_vec()).collect()),
        },
        other => other.clone(),
    }
}

fn policy(w: Weighting, p_true: &crate::linalg::RMat) -> WeightPolicy {
    match w {
        Weighting::Empirical => WeightPolicy::Empirical,
        Weighting::Oracle => WeightPolicy::Oracle(p_true.clone()),
        Weighting::Uniform => WeightPolicy::Uniform,
    }
}

/// Estimate, repair and score one record.
#[derive(Debug, Clone)]
pub struct TrialEstimate {
    pub estimate: Estimate,
    pub correction: CorrectionResult,
    /// `sum_i |P_hat_i - P_i|_F^2`.
    pub mse: f64,
}

/// Runs `spec` on `record` and scores the physical estimate against `truth`.
/// Probes that received no shots carry no information and are dropped.
pub fn estimate_and_score(
    probes: &ProbeSet,
    record: &MeasurementRecord,
    truth: &Povm,
    spec: &EstimatorSpec,
) -> Result<TrialEstimate> {
    if record.shots().contains(&0) {
        let support: Vec<usize> = (0..record.m()).filter(|&j| record.shots()[j] > 0).collect();
        if support.is_empty() {
            return Err(QdtError::InvalidRecord("no probe received shots".into()));
        }
        return estimate_and_score(&probes.subset(&support)?, &record.subset(&support)?, truth, spec);
    }
    let true_thetas = truth.thetas(&probes.basis)?;
    let p_true = born_probabilities(truth, probes)?;
    let wd = build_weighted_data(record, probes, &policy(spec.weighting, &p_true))?;
    let kernel = resolve_kernel(&spec.kernel, &true_thetas);
    let estimate = rwls_estimate(&wd, &kernel)?;
    let correction = correct(&estimate, probes)?;
    let mse = final_mse(correction.corrected.elements(), truth.elements());
    Ok(TrialEstimate {
        estimate,
        correction,
        mse,
    })
}

/// Repairs an estimate, block by block when the basis is block-diagonal.
pub fn correct(estimate: &Estimate, probes: &ProbeSet) -> Result<CorrectionResult> {
    let raw = estimate.e_hats();
    match probes.basis.layout() {
        BasisLayout::Block(sizes) => correct_blockwise(&raw, sizes),
        _ => correct_to_povm(&raw),
    }
}

pub fn final_mse(est: &[crate::linalg::CMat], truth: &[crate::linalg::CMat]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum()
}

/// Inputs of a sweep.
#[derive(Debug, Clone)]
pub struct ScalingSetup<'a> {
    pub probes: &'a ProbeSet,
    pub truth: &'a Povm,
    pub estimators: Vec<EstimatorSpec>,
    pub n_grid: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    /// Shot fractions per probe; uniform when `None`.
    pub eta: Option<Vec<f64>>,
    pub record_timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub estimator: String,
    pub n: u64,
    pub trial: usize,
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub kernel: String,
    pub n: u64,
    /// Successful trials.
    pub trials: usize,
    pub failures: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub slope: Option<f64>,
    pub range_condition: bool,
    pub runtime_s: f64,
}

impl ScalingRow {
    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            f64::NAN
        } else {
            self.std_mse / (self.trials as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub trials: Vec<TrialRecord>,
}

impl ScalingTable {
    pub fn row(&self, kernel: &str, n: u64) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.kernel == kernel && r.n == n)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "kernel",
            "N",
            "trials",
            "mean_mse",
            "std_mse",
            "slope",
            "range_condition",
            "runtime_s",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.kernel.clone(),
                r.n.to_string(),
                r.trials.to_string(),
                fmt12(r.mean_mse),
                fmt12(r.std_mse),
                r.slope.map(fmt12).unwrap_or_default(),
                r.range_condition.to_string(),
                fmt12(r.runtime_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Twelve significant digits.
pub fn fmt12(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        x.to_string()
    }
}

/// Key of the sampling stream for grid point `n_index`, trial `trial`.
pub fn trial_key(n_index: usize, trial: usize) -> u64 {
    ((n_index as u64) << 32) | trial as u64
}

/// Shot allocation for a total of `n` under fractions `eta`. A designed
/// allocation may leave probes empty; a uniform one may not.
pub fn allocate(eta: Option<&[f64]>, m: usize, n: u64) -> Result<Vec<u64>> {
    let shots = match eta {
        Some(e) => {
            if e.len() != m {
                return Err(shape_err(format!("{} shot fractions for {m} probes", e.len())));
            }
            let s = round_shots(e, n);
            if s.iter().all(|&x| x == 0) {
                return Err(QdtError::InvalidConfig(format!("N = {n} allocates no shots")));
            }
            return Ok(s);
        }
        None => round_shots(&vec![1.0 / m as f64; m], n),
    };
    if let Some(j) = shots.iter().position(|&s| s == 0) {
        return Err(QdtError::InvalidConfig(format!(
            "N = {n} leaves probe {j} without shots"
        )));
    }
    Ok(shots)
}

/// Range-condition verdict per estimator: true when every outcome passes.
pub fn range_verdicts(setup: &ScalingSetup) -> Result<Vec<bool>> {
    let m = setup.probes.len();
    let h = setup.eta.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
    let thetas = setup.truth.thetas(&setup.probes.basis)?;
    let weighted = compute_b(setup.probes, setup.truth, &h)?;
    let unit = InfoMatrix::from_design(&setup.probes.x, &h, &vec![1.0; m])?;
    setup
        .estimators
        .iter()
        .map(|spec| {
            for (i, theta) in thetas.iter().enumerate() {
                let b = match spec.weighting {
                    Weighting::Uniform => &unit.b,
                    _ => &weighted[i].b,
                };
                let v = kernel_range_condition(&spec.kernel, theta, b, i, RANK_RTOL)?;
                if !v.holds {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect()
}

/// Runs the sweep. Every (N, trial) pair draws its counts from its own
/// stream and all estimators see the same counts.
pub fn scaling_study(setup: &ScalingSetup) -> Result<ScalingTable> {
    if setup.trials == 0 || setup.n_grid.is_empty() || setup.estimators.is_empty() {
        return Err(QdtError::InvalidConfig(
            "a study needs at least one trial, grid point and estimator".into(),
        ));
    }
    for e in &setup.estimators {
        e.kernel.validate()?;
    }
    let m = setup.probes.len();
    let p_true = born_probabilities(setup.truth, setup.probes)?;
    let allocations = setup
        .n_grid
        .iter()
        .map(|&n| allocate(setup.eta.as_deref(), m, n))
        .collect::<Result<Vec<_>>>()?;
    let verdicts = range_verdicts(setup)?;
    let ne = setup.estimators.len();

    let tasks: Vec<(usize, usize)> = (0..setup.n_grid.len())
        .flat_map(|g| (0..setup.trials).map(move |t| (g, t)))
        .collect();
    // (mse or error, seconds) per estimator, per task
    let results: Vec<Vec<(std::result::Result<f64, String>, f64)>> = tasks
        .par_iter()
        .map(|&(g, t)| {
            let mut rng = stream(setup.seed, trial_key(g, t), stage::SAMPLING);
            let record = match sample_counts(&p_true, &allocations[g], &mut rng) {
                Ok(r) => r,
                Err(e) => return vec![(Err(e.to_string()), 0.0); ne],
            };
            setup
                .estimators
                .iter()
                .map(|spec| {
                    let start = Instant::now();
                    let r = estimate_and_score(setup.probes, &record, setup.truth, spec)
                        .map(|te| te.mse)
                        .map_err(|e| e.to_string());
                    (r, start.elapsed().as_secs_f64())
                })
                .collect()
        })
        .collect();

    let mut trials = Vec::with_capacity(tasks.len() * ne);
    let mut rows = Vec::with_capacity(setup.n_grid.len() * ne);
    for (ei, spec) in setup.estimators.iter().enumerate() {
        let label = spec.label();
        let mut means = Vec::with_capacity(setup.n_grid.len());
        let first_row = rows.len();
        for (g, &n) in setup.n_grid.iter().enumerate() {
            let mut vals = Vec::with_capacity(setup.trials);
            let mut failures = 0;
            let mut secs = 0.0;
            for t in 0..setup.trials {
                let (res, dt) = &results[g * setup.trials + t][ei];
                secs += dt;
                let (mse, error) = match res {
                    Ok(v) => {
                        vals.push(*v);
                        (Some(*v), None)
                    }
                    Err(e) => {
                        failures += 1;
                        (None, Some(e.clone()))
                    }
                };
                trials.push(TrialRecord {
                    estimator: label.clone(),
                    n,
                    trial: t,
                    mse,
                    error,
                });
            }
            let (mean, std) = mean_std(&vals);
            means.push(mean);
            rows.push(ScalingRow {
                kernel: label.clone(),
                n,
                trials: vals.len(),
                failures,
                mean_mse: mean,
                std_mse: std,
                slope: None,
                range_condition: verdicts[ei],
                runtime_s: if setup.record_timing { secs } else { 0.0 },
            });
        }
        let ns: Vec<f64> = setup.n_grid.iter().map(|&n| n as f64).collect();
        let slope = fit_slope(&ns, &means);
        for r in &mut rows[first_row..] {
            r.slope = slope;
        }
    }
    Ok(ScalingTable { rows, trials })
}

/// Mean and sample standard deviation; NaN mean when empty.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisOrdering, HermitianBasis};
    use crate::detector::{example_detector, ExampleDetector};
    use crate::rng::seeded;
    use crate::states::{build_probe_set, haar_probe_states};
    use std::sync::Arc;

    fn setup_probes(m: usize) -> ProbeSet {
        let basis = Arc::new(HermitianBasis::build(4, BasisOrdering::GellmannDefault).unwrap());
        build_probe_set(haar_probe_states(4, m, &mut seeded(11)).unwrap(), basis).unwrap()
    }

    #[test]
    fn mean_std_small_cases() {
        assert!(mean_std(&[]).0.is_nan());
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_fixed_columns_and_precision() {
        let table = ScalingTable {
            rows: vec![ScalingRow {
                kernel: "none".into(),
                n: 1000,
                trials: 3,
                failures: 0,
                mean_mse: 1.0 / 3.0,
                std_mse: 0.0,
                slope: None,
                range_condition: true,
                runtime_s: 0.0,
            }],
            trials: vec![],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "kernel,N,trials,mean_mse,std_mse,slope,range_condition,runtime_s"
        );
        assert_eq!(
            lines.next().unwrap(),
            "none,1000,3,3.33333333333e-1,0.00000000000e0,,true,0.00000000000e0"
        );
    }

    #[test]
    fn allocation_rejects_empty_probes() {
        assert_eq!(allocate(None, 4, 10).unwrap(), vec![3, 3, 2, 2]);
        assert!(allocate(None, 4, 3).is_err());
        // a designed allocation may skip probes, but not all of them
        assert_eq!(allocate(Some(&[0.5, 0.0, 0.5]), 3, 10).unwrap(), vec![5, 0, 5]);
        assert!(allocate(Some(&[0.5, 0.5]), 3, 10).is_err());
    }

    #[test]
    fn unmeasured_probes_are_dropped() {
        let probes = setup_probes(20);
        let truth = example_detector(ExampleDetector::PaperD4).unwrap();
        let p = born_probabilities(&truth, &probes).unwrap();
        let mut shots = vec![50_000u64; 20];
        shots[3] = 0;
        let rec = sample_counts(&p, &shots, &mut seeded(2)).unwrap();
        let spec = EstimatorSpec::new(KernelSpec::None, Weighting::Empirical);
        let full = estimate_and_score(&probes, &rec, &truth, &spec).unwrap();
        let keep: Vec<usize> = (0..20).filter(|&j| j != 3).collect();
        let sub = estimate_and_score(
            &probes.subset(&keep).unwrap(),
            &rec.subset(&keep).unwrap(),
            &truth,
            &spec,
        )
        .unwrap();
        assert_eq!(full.mse, sub.mse);
    }

    #[test]
    fn study_is_deterministic_and_shares_counts() {
        let probes = setup_probes(20);
        let truth = example_detector(ExampleDetector::PaperD4).unwrap();
        let setup = ScalingSetup {
            probes: &probes,
            truth: &truth,
            estimators: vec![
                EstimatorSpec::new(KernelSpec::None, Weighting::Empirical),
                EstimatorSpec::new(KernelSpec::None, Weighting::Empirical),
                EstimatorSpec::new(KernelSpec::BestOracle { theta: None }, Weighting::Empirical),
            ],
            n_grid: vec![10_000, 100_000],
            trials: 4,
            seed: 3,
            eta: None,
            record_timing: false,
        };
        let a = scaling_study(&setup).unwrap();
        let b = scaling_study(&setup).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        // identical estimators on identical counts
        assert_eq!(a.rows[0].mean_mse, a.rows[2].mean_mse);
        assert!(a.rows.iter().all(|r| r.range_condition && r.trials == 4));
        // a different pool size changes nothing
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| scaling_study(&setup)).unwrap();
        let mut cc = Vec::new();
        c.write_csv(&mut cc).unwrap();
        assert_eq!(ca, cc);
    }

    #[test]
    fn incomplete_probes_flag_range_failures() {
        let probes = setup_probes(10);
        let truth = example_detector(ExampleDetector::PaperD4).unwrap();
        let setup = ScalingSetup {
            probes: &probes,
            truth: &truth,
            estimators: vec![
                EstimatorSpec::new(KernelSpec::Tikhonov { c: 10.0 }, Weighting::Empirical),
                EstimatorSpec::new(KernelSpec::BestOracle { theta: None }, Weighting::Empirical),
            ],
            n_grid: vec![1000],
            trials: 1,
            seed: 1,
            eta: None,
            record_timing: false,
        };
        assert_eq!(range_verdicts(&setup).unwrap(), vec![false, true]);
    }
}
