//! Born-rule probabilities, multinomial count simulation and the weighted
//! regression data built from a measurement record.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::basis::HermitianBasis;
use crate::detector::Povm;
use crate::error::{shape_err, QdtError, Result};
use crate::linalg::{trace_product_re, RMat, RVec};
use crate::states::ProbeSet;

/// Probabilities below this are treated as rounding noise and clipped.
pub const NEG_PROB_TOL: f64 = 1e-9;

/// `p_ij = Tr(P_i rho_j)`, n x M. Truncation deficits are added to the last row.
pub fn born_probabilities(povm: &Povm, probes: &ProbeSet) -> Result<RMat> {
    if povm.dim() != probes.dim() {
        return Err(shape_err(format!(
            "detector dimension {} differs from probe dimension {}",
            povm.dim(),
            probes.dim()
        )));
    }
    let n = povm.n();
    let m = probes.len();
    let mut p = RMat::zeros(n, m);
    for (j, s) in probes.states.iter().enumerate() {
        for (i, e) in povm.elements().iter().enumerate() {
            p[(i, j)] = trace_product_re(e, &s.mat);
        }
        p[(n - 1, j)] += s.trace_deficit;
    }
    Ok(p)
}

/// Counts `n_ij` and shot allocations `N_j` for one experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementRecord {
    /// Row-major n x M.
    counts: Vec<u64>,
    shots: Vec<u64>,
    n: usize,
}

impl MeasurementRecord {
    pub fn new(counts: Vec<Vec<u64>>, shots: Vec<u64>) -> Result<Self> {
        let n = counts.len();
        if n == 0 {
            return Err(QdtError::InvalidRecord("no outcomes".into()));
        }
        let m = shots.len();
        let mut flat = Vec::with_capacity(n * m);
        for (i, row) in counts.iter().enumerate() {
            if row.len() != m {
                return Err(QdtError::InvalidRecord(format!(
                    "outcome {i} has {} probe entries, expected {m}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        let rec = Self {
            counts: flat,
            shots,
            n,
        };
        for j in 0..m {
            let tot: u64 = (0..n).map(|i| rec.count(i, j)).sum();
            if tot != rec.shots[j] {
                return Err(QdtError::InvalidRecord(format!(
                    "probe {j}: counts sum to {tot}, shots are {}",
                    rec.shots[j]
                )));
            }
        }
        Ok(rec)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.shots.len()
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.m() + j]
    }

    pub fn shots(&self) -> &[u64] {
        &self.shots
    }

    pub fn total_shots(&self) -> u64 {
        self.shots.iter().sum()
    }

    /// `p_hat_ij = n_ij / N_j`; columns with zero shots are zero.
    pub fn freqs(&self) -> RMat {
        RMat::from_fn(self.n, self.m(), |i, j| {
            let nj = self.shots[j];
            if nj == 0 {
                0.0
            } else {
                self.count(i, j) as f64 / nj as f64
            }
        })
    }

    /// Record restricted to the given probes, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let m = self.m();
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(shape_err(format!("probe index {bad} out of range")));
        }
        let counts = (0..self.n)
            .map(|i| idx.iter().map(|&j| self.count(i, j)).collect())
            .collect();
        Self::new(counts, idx.iter().map(|&j| self.shots[j]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.n {
            for j in 0..self.m() {
                w.serialize(CsvRow {
                    outcome_index: i,
                    probe_index: j,
                    count: self.count(i, j),
                    shots: self.shots[j],
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r
            .deserialize::<CsvRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_rows(&rows)
    }

    fn from_rows(rows: &[CsvRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(QdtError::InvalidRecord("empty record".into()));
        }
        let n = rows.iter().map(|r| r.outcome_index).max().unwrap_or(0) + 1;
        let m = rows.iter().map(|r| r.probe_index).max().unwrap_or(0) + 1;
        let mut counts = vec![vec![None; m]; n];
        let mut shots: Vec<Option<u64>> = vec![None; m];
        for r in rows {
            let cell = &mut counts[r.outcome_index][r.probe_index];
            if cell.is_some() {
                return Err(QdtError::InvalidRecord(format!(
                    "duplicate entry for outcome {} probe {}",
                    r.outcome_index, r.probe_index
                )));
            }
            *cell = Some(r.count);
            match shots[r.probe_index] {
                Some(s) if s != r.shots => {
                    return Err(QdtError::InvalidRecord(format!(
                        "inconsistent shots for probe {}",
                        r.probe_index
                    )))
                }
                _ => shots[r.probe_index] = Some(r.shots),
            }
        }
        let counts = counts
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, c)| {
                        c.ok_or_else(|| {
                            QdtError::InvalidRecord(format!("missing outcome {i} probe {j}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let shots = shots.into_iter().map(|s| s.unwrap_or(0)).collect();
        Self::new(counts, shots)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    outcome_index: usize,
    probe_index: usize,
    count: u64,
    shots: u64,
}

/// Multinomial counts per column, drawn as a chain of binomials.
pub fn sample_counts<R: Rng + ?Sized>(p: &RMat, shots: &[u64], rng: &mut R) -> Result<MeasurementRecord> {
    let (n, m) = p.shape();
    if shots.len() != m {
        return Err(shape_err(format!(
            "{} shot entries for {m} probes",
            shots.len()
        )));
    }
    let mut counts = vec![vec![0u64; m]; n];
    for j in 0..m {
        let col: Vec<f64> = p.column(j).iter().cloned().collect();
        if let Some(bad) = col.iter().find(|&&x| x < -NEG_PROB_TOL || !x.is_finite()) {
            return Err(QdtError::InvalidDistribution(format!(
                "probe {j} has probability {bad:.3e}"
            )));
        }
        let col: Vec<f64> = col.into_iter().map(|x| x.max(0.0)).collect();
        let total: f64 = col.iter().sum();
        if total <= 0.0 {
            return Err(QdtError::InvalidDistribution(format!(
                "probe {j} has zero total probability"
            )));
        }
        let mut left = shots[j];
        let mut mass = 1.0;
        for i in 0..n - 1 {
            if left == 0 {
                break;
            }
            let pi = col[i] / total;
            let q = if mass > 0.0 { (pi / mass).clamp(0.0, 1.0) } else { 1.0 };
            let k = Binomial::new(left, q)
                .map_err(|e| QdtError::InvalidDistribution(e.to_string()))?
                .sample(rng);
            counts[i][j] = k;
            left -= k;
            mass -= pi;
        }
        counts[n - 1][j] = left;
    }
    MeasurementRecord::new(counts, shots.to_vec())
}

/// How the per-probe weights are obtained.
#[derive(Debug, Clone)]
pub enum WeightPolicy {
    /// `N_j / (p_hat - p_hat^2)` with `p_hat` clamped to `[1/(2N_j), 1 - 1/(2N_j)]`.
    Empirical,
    /// The same formula with known probabilities (n x M).
    Oracle(RMat),
    /// Every weight equal to the total shot count; gives plain LS.
    Uniform,
}

/// Regression data for one outcome.
#[derive(Debug, Clone)]
pub struct OutcomeData {
    pub weights: RVec,
    pub yhat: RVec,
    pub ybar: RVec,
    pub ytilde: RVec,
    pub xtilde: RMat,
    /// `R = Xt^T Xt`.
    pub r: RMat,
    /// `F = Xt^T yt`.
    pub f: RVec,
}

#[derive(Debug, Clone)]
pub struct WeightedData {
    pub x: RMat,
    pub outcomes: Vec<OutcomeData>,
    pub sigma: f64,
    pub shots: Vec<u64>,
    pub basis: Arc<HermitianBasis>,
}

impl WeightedData {
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn total_shots(&self) -> u64 {
        self.shots.iter().sum()
    }
}

/// Regression responses `ybar_ij = y_ij - t_j [i = n-1] - (1 - t_j) / n` for
/// observed frequencies `y` and probe trace deficits `t`. They equal
/// `phi_j^T theta_i` in expectation; with exact states this is `y - 1/n`.
pub fn responses(freqs: &RMat, deficits: &[f64]) -> RMat {
    let n = freqs.nrows();
    RMat::from_fn(n, freqs.ncols(), |i, j| {
        let t = deficits[j];
        let folded = if i + 1 == n { t } else { 0.0 };
        freqs[(i, j)] - folded - (1.0 - t) / n as f64
    })
}

pub fn build_weighted_data(
    record: &MeasurementRecord,
    probes: &ProbeSet,
    policy: &WeightPolicy,
) -> Result<WeightedData> {
    let m = probes.len();
    if record.m() != m {
        return Err(shape_err(format!(
            "record has {} probes, probe set has {m}",
            record.m()
        )));
    }
    if let Some(j) = record.shots().iter().position(|&s| s == 0) {
        return Err(QdtError::InvalidRecord(format!("probe {j} has zero shots")));
    }
    let n = record.n();
    let freqs = record.freqs();
    let ybars = responses(&freqs, &probes.trace_deficits());
    let sigma = 1.0;
    let x = &probes.x;
    let total = record.total_shots() as f64;
    let outcomes = (0..n)
        .map(|i| {
            let weights = RVec::from_fn(m, |j, _| {
                let nj = record.shots()[j] as f64;
                match policy {
                    WeightPolicy::Uniform => total,
                    WeightPolicy::Empirical => weight(freqs[(i, j)], nj),
                    WeightPolicy::Oracle(p) => weight(p[(i, j)], nj),
                }
            });
            let yhat = freqs.row(i).transpose();
            let ybar = ybars.row(i).transpose();
            let scale = weights.map(|w| w.sqrt() / sigma);
            let ytilde = ybar.component_mul(&scale);
            let mut xtilde = x.clone();
            for (j, s) in scale.iter().enumerate() {
                xtilde.row_mut(j).scale_mut(*s);
            }
            let r = xtilde.transpose() * &xtilde;
            let f = xtilde.transpose() * &ytilde;
            OutcomeData {
                weights,
                yhat,
                ybar,
                ytilde,
                xtilde,
                r,
                f,
            }
        })
        .collect();
    Ok(WeightedData {
        x: x.clone(),
        outcomes,
        sigma,
        shots: record.shots().to_vec(),
        basis: probes.basis.clone(),
    })
}

/// `N / (p - p^2)` with `p` clamped half a count away from 0 and 1.
pub fn weight(p: f64, shots: f64) -> f64 {
    let eps = 1.0 / (2.0 * shots);
    let q = p.clamp(eps, 1.0 - eps);
    shots / (q - q * q)
}
