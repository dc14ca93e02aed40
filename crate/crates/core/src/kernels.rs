//! Regularization kernels, hyper-parameter cross-validation and the
//! two-step adaptive schemes.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QdtError, Result};
use crate::estimators::rwls_estimate;
use crate::linalg::{outer, RMat, RVec};
use crate::measurement::{build_weighted_data, responses, MeasurementRecord, WeightPolicy};
use crate::states::ProbeSet;

/// Regularization choice. Indices in the DI/TC/DC formulas start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    None,
    Tikhonov {
        c: f64,
    },
    Di {
        c: f64,
        mu: f64,
    },
    Tc {
        c: f64,
        mu: f64,
    },
    Dc {
        c: f64,
        mu1: f64,
        mu2: f64,
    },
    Rank1Adaptive {
        base: Box<KernelSpec>,
    },
    FullrankAdaptive {
        base: Box<KernelSpec>,
    },
    /// `theta` holds one true parameter vector per outcome.
    BestOracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<Vec<f64>>>,
    },
}

/// A kernel turned into matrices. Estimators use the S-form whenever `s` is
/// present and fall back to the D-form otherwise.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub s: Option<RMat>,
    pub d: Option<RMat>,
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::None => "none",
            KernelSpec::Tikhonov { .. } => "tikhonov",
            KernelSpec::Di { .. } => "di",
            KernelSpec::Tc { .. } => "tc",
            KernelSpec::Dc { .. } => "dc",
            KernelSpec::Rank1Adaptive { .. } => "rank1_adaptive",
            KernelSpec::FullrankAdaptive { .. } => "fullrank_adaptive",
            KernelSpec::BestOracle { .. } => "best_oracle",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            KernelSpec::Rank1Adaptive { .. } | KernelSpec::FullrankAdaptive { .. }
        )
    }

    pub fn adaptive_base(&self) -> Option<&KernelSpec> {
        match self {
            KernelSpec::Rank1Adaptive { base } | KernelSpec::FullrankAdaptive { base } => Some(base),
            _ => None,
        }
    }

    /// Parameter range checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QdtError::InvalidKernel(msg));
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            KernelSpec::None => Ok(()),
            KernelSpec::Tikhonov { c } if !nonneg(*c) => bad(format!("c = {c} must be >= 0")),
            KernelSpec::Di { c, mu } | KernelSpec::Tc { c, mu } => {
                if !nonneg(*c) {
                    bad(format!("c = {c} must be >= 0"))
                } else if !unit(*mu) {
                    bad(format!("mu = {mu} must lie in [0, 1]"))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Dc { c, mu1, mu2 } => {
                if !nonneg(*c) {
                    bad(format!("c = {c} must be >= 0"))
                } else if !(mu1.is_finite() && (-1.0..=1.0).contains(mu1)) {
                    bad(format!("mu1 = {mu1} must lie in [-1, 1]"))
                } else if !unit(*mu2) {
                    bad(format!("mu2 = {mu2} must lie in [0, 1]"))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Rank1Adaptive { base } | KernelSpec::FullrankAdaptive { base } => {
                if base.is_adaptive() {
                    return bad("adaptive kernels take a non-adaptive first step".into());
                }
                if matches!(**base, KernelSpec::BestOracle { .. }) {
                    return bad("the first adaptive step cannot use the oracle kernel".into());
                }
                base.validate()
            }
            KernelSpec::BestOracle { theta } => match theta {
                Some(t) if t.iter().flatten().any(|x| !x.is_finite()) => {
                    bad("oracle theta must be finite".into())
                }
                _ => Ok(()),
            },
            KernelSpec::Tikhonov { .. } => Ok(()),
        }
    }
}

/// `diag(c mu^k)`, `k = 1..=k_dim`.
pub fn di_kernel(c: f64, mu: f64, k_dim: usize) -> RMat {
    RMat::from_fn(k_dim, k_dim, |a, b| {
        if a == b {
            c * mu.powi(a as i32 + 1)
        } else {
            0.0
        }
    })
}

/// `c min(mu^j, mu^k)`.
pub fn tc_kernel(c: f64, mu: f64, k_dim: usize) -> RMat {
    RMat::from_fn(k_dim, k_dim, |a, b| c * mu.powi(a as i32 + 1).min(mu.powi(b as i32 + 1)))
}

/// `c mu1^|k-j| mu2^((k+j)/2)`.
pub fn dc_kernel(c: f64, mu1: f64, mu2: f64, k_dim: usize) -> RMat {
    RMat::from_fn(k_dim, k_dim, |a, b| {
        let (k, j) = (a as i32 + 1, b as i32 + 1);
        c * mu1.powi((k - j).abs()) * mu2.powf((k + j) as f64 / 2.0)
    })
}

/// Matrices for one outcome. `context` is the first-step estimate used by the
/// adaptive kinds.
pub fn materialize(
    kernel: &KernelSpec,
    k_dim: usize,
    outcome: usize,
    context: Option<&RVec>,
    sigma: f64,
) -> Result<Materialized> {
    kernel.validate()?;
    let s2 = sigma * sigma;
    let with_d = |s: RMat| {
        let d = s
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|x| x.is_finite()))
            .map(|inv| inv * s2);
        Materialized { s: Some(s), d }
    };
    Ok(match kernel {
        KernelSpec::None => Materialized {
            s: None,
            d: Some(RMat::zeros(k_dim, k_dim)),
        },
        KernelSpec::Tikhonov { c } => Materialized {
            s: (*c > 0.0).then(|| RMat::identity(k_dim, k_dim) * (s2 / c)),
            d: Some(RMat::identity(k_dim, k_dim) * *c),
        },
        KernelSpec::Di { c, mu } => with_d(di_kernel(*c, *mu, k_dim)),
        KernelSpec::Tc { c, mu } => with_d(tc_kernel(*c, *mu, k_dim)),
        KernelSpec::Dc { c, mu1, mu2 } => with_d(dc_kernel(*c, *mu1, *mu2, k_dim)),
        KernelSpec::Rank1Adaptive { .. } => {
            let t0 = context_vec(kernel, context, k_dim)?;
            Materialized {
                s: Some(outer(t0)),
                d: None,
            }
        }
        KernelSpec::FullrankAdaptive { base } => {
            let t0 = context_vec(kernel, context, k_dim)?;
            let sb = materialize(base, k_dim, outcome, None, sigma)?.s.ok_or_else(|| {
                QdtError::InvalidKernel(format!(
                    "full-rank adaptive kernel needs a base with a kernel matrix, got {}",
                    base.name()
                ))
            })?;
            with_d(outer(t0) + sb)
        }
        KernelSpec::BestOracle { theta } => {
            let t = theta
                .as_ref()
                .and_then(|t| t.get(outcome))
                .ok_or_else(|| QdtError::MissingContext(format!("oracle theta for outcome {outcome}")))?;
            if t.len() != k_dim {
                return Err(QdtError::InvalidKernel(format!(
                    "oracle theta has length {}, expected {k_dim}",
                    t.len()
                )));
            }
            Materialized {
                s: Some(outer(&RVec::from_column_slice(t))),
                d: None,
            }
        }
    })
}

fn context_vec<'a>(kernel: &KernelSpec, context: Option<&'a RVec>, k_dim: usize) -> Result<&'a RVec> {
    let t = context.ok_or_else(|| QdtError::MissingContext(kernel.name().into()))?;
    if t.len() != k_dim {
        return Err(QdtError::InvalidKernel(format!(
            "rough estimate has length {}, expected {k_dim}",
            t.len()
        )));
    }
    Ok(t)
}

/// Estimation / validation partition of probe indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub estimation: Vec<usize>,
    pub validation: Vec<usize>,
}

impl CvSplit {
    /// Random split with `n_est` estimation probes.
    pub fn random<R: Rng + ?Sized>(m: usize, n_est: usize, rng: &mut R) -> Result<Self> {
        if n_est == 0 || n_est >= m {
            return Err(QdtError::InvalidConfig(format!(
                "estimation part must hold between 1 and {} of {m} probes, got {n_est}",
                m.saturating_sub(1)
            )));
        }
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        let mut estimation = idx[..n_est].to_vec();
        let mut validation = idx[n_est..].to_vec();
        estimation.sort_unstable();
        validation.sort_unstable();
        Ok(Self {
            estimation,
            validation,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub selected: KernelSpec,
    pub index: usize,
    /// Validation residual per grid candidate; failed candidates are infinite.
    pub residuals: Vec<f64>,
}

/// Picks the grid candidate with the smallest validation residual
/// `sum_i |ybar_i - X_2 theta_i|^2`; ties go to the earlier candidate.
pub fn cross_validate(
    probes: &ProbeSet,
    record: &MeasurementRecord,
    policy: &WeightPolicy,
    grid: &[KernelSpec],
    split: &CvSplit,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(QdtError::InvalidConfig("cross-validation grid is empty".into()));
    }
    if split.validation.is_empty() || split.estimation.is_empty() {
        return Err(QdtError::InvalidConfig("both split parts must be nonempty".into()));
    }
    let est_probes = probes.subset(&split.estimation)?;
    let est_record = record.subset(&split.estimation)?;
    let est_policy = policy_subset(policy, &split.estimation);
    let wd = build_weighted_data(&est_record, &est_probes, &est_policy)?;

    let val_probes = probes.subset(&split.validation)?;
    let val_y = responses(&record.subset(&split.validation)?.freqs(), &val_probes.trace_deficits());
    let x2 = &val_probes.x;

    let residuals: Vec<f64> = grid
        .par_iter()
        .map(|cand| match rwls_estimate(&wd, cand) {
            Ok(est) => {
                let mut total = 0.0;
                for (i, o) in est.outcomes.iter().enumerate() {
                    let ybar = val_y.row(i).transpose();
                    total += (ybar - x2 * &o.theta_hat).norm_squared();
                }
                if total.is_finite() {
                    total
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        })
        .collect();

    let mut index = 0;
    for (k, r) in residuals.iter().enumerate() {
        if *r < residuals[index] {
            index = k;
        }
    }
    if !residuals[index].is_finite() {
        return Err(QdtError::NotIdentifiable(
            "no grid candidate produced an estimate".into(),
        ));
    }
    Ok(CvOutcome {
        selected: grid[index].clone(),
        index,
        residuals,
    })
}

fn policy_subset(policy: &WeightPolicy, idx: &[usize]) -> WeightPolicy {
    match policy {
        WeightPolicy::Oracle(p) => WeightPolicy::Oracle(p.select_columns(idx)),
        other => other.clone(),
    }
}

/// DI/TC/DC candidates over the Cartesian product of the given values.
pub fn kernel_grid(kind: &str, cs: &[f64], mus: &[f64], mu1s: &[f64]) -> Result<Vec<KernelSpec>> {
    let mut out = Vec::new();
    for &c in cs {
        match kind {
            "tikhonov" => out.push(KernelSpec::Tikhonov { c }),
            "di" => out.extend(mus.iter().map(|&mu| KernelSpec::Di { c, mu })),
            "tc" => out.extend(mus.iter().map(|&mu| KernelSpec::Tc { c, mu })),
            "dc" => {
                for &mu1 in mu1s {
                    out.extend(mus.iter().map(|&mu2| KernelSpec::Dc { c, mu1, mu2 }));
                }
            }
            other => {
                return Err(QdtError::InvalidConfig(format!(
                    "no grid expansion for kernel kind '{other}'"
                )))
            }
        }
    }
    for k in &out {
        k.validate()?;
    }
    Ok(out)
}
