//! Closed-form LS, AWLS and regularized WLS estimators together with their
//! exact mean-squared-error matrices.

use serde::Serialize;

use crate::basis::{CoeffKind, CoeffVector, HermitianBasis};
use crate::error::{shape_err, QdtError, Result};
use crate::kernels::{materialize, KernelSpec, Materialized};
use crate::linalg::{
    cond_limit, condition_number, outer, pinv, solve_guarded, solve_vec_guarded, sym_eigen_desc,
    sym_part, CMat, RMat, RVec, RANK_RTOL,
};
use crate::measurement::{OutcomeData, WeightedData};

#[derive(Debug, Clone)]
pub struct OutcomeEstimate {
    pub theta_hat: RVec,
    pub lambda_hat: RVec,
    /// Hermitian, possibly not PSD.
    pub e_hat: CMat,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub outcomes: Vec<OutcomeEstimate>,
    pub method: String,
    pub kernel: Option<KernelSpec>,
}

impl Estimate {
    pub fn from_thetas(
        thetas: Vec<RVec>,
        basis: &HermitianBasis,
        method: &str,
        kernel: Option<KernelSpec>,
    ) -> Result<Self> {
        let n = thetas.len();
        let outcomes = thetas
            .into_iter()
            .map(|t| {
                let lambda = basis.lambda_from_theta(&CoeffVector::new(t.clone(), CoeffKind::Theta), n)?;
                let e_hat = basis.deparameterize(&lambda.values)?;
                Ok(OutcomeEstimate {
                    theta_hat: t,
                    lambda_hat: lambda.values,
                    e_hat,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            outcomes,
            method: method.to_string(),
            kernel,
        })
    }

    pub fn thetas(&self) -> Vec<RVec> {
        self.outcomes.iter().map(|o| o.theta_hat.clone()).collect()
    }

    pub fn e_hats(&self) -> Vec<CMat> {
        self.outcomes.iter().map(|o| o.e_hat.clone()).collect()
    }

    /// One JSON record per outcome.
    pub fn to_records(&self, trace_msem: Option<&[f64]>) -> Vec<EstimateRecord> {
        self.outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| EstimateRecord {
                outcome: i,
                theta_hat: o.theta_hat.iter().cloned().collect(),
                method: self.method.clone(),
                kernel: self.kernel.clone(),
                trace_msem: trace_msem.and_then(|t| t.get(i).cloned()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    pub outcome: usize,
    pub theta_hat: Vec<f64>,
    pub method: String,
    pub kernel: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_msem: Option<f64>,
}

/// `(X^T X)^{-1} X^T ybar`.
pub fn ls_theta(x: &RMat, ybar: &RVec) -> Result<RVec> {
    if x.nrows() != ybar.len() {
        return Err(shape_err(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            ybar.len()
        )));
    }
    solve_vec_guarded(&(x.transpose() * x), &(x.transpose() * ybar))
}

/// `(Xt^T Xt)^{-1} Xt^T yt`.
pub fn awls_theta(o: &OutcomeData) -> Result<RVec> {
    solve_vec_guarded(&o.r, &o.f)
}

/// Regularized WLS for one outcome. With no regularization and a singular
/// normal matrix the pseudo-inverse solution is returned.
pub fn rwls_theta(o: &OutcomeData, mk: &Materialized, sigma: f64) -> Result<RVec> {
    let k = o.r.nrows();
    if let Some(s) = &mk.s {
        let a = s * &o.r + RMat::identity(k, k) * (sigma * sigma);
        return solve_vec_guarded(&a, &(s * &o.f));
    }
    let d = mk
        .d
        .as_ref()
        .ok_or_else(|| QdtError::InvalidKernel("kernel produced neither S nor D".into()))?;
    if d.iter().all(|&x| x == 0.0) {
        return match solve_vec_guarded(&o.r, &o.f) {
            Err(QdtError::NotIdentifiable(_)) => Ok(pinv(&o.r, RANK_RTOL) * &o.f),
            other => other,
        };
    }
    solve_vec_guarded(&(&o.r + d), &o.f)
}

fn check_kernel_psd(mk: &Materialized) -> Result<()> {
    for m in [&mk.s, &mk.d].into_iter().flatten() {
        let min = crate::linalg::min_eigenvalue_sym(m);
        let scale = m.norm().max(1.0);
        if min < -1e-10 * scale {
            return Err(QdtError::InvalidKernel(format!(
                "kernel matrix has eigenvalue {min:.3e}"
            )));
        }
    }
    Ok(())
}

pub fn ls_estimate(wd: &WeightedData) -> Result<Estimate> {
    let thetas = wd
        .outcomes
        .iter()
        .map(|o| ls_theta(&wd.x, &o.ybar))
        .collect::<Result<Vec<_>>>()?;
    Estimate::from_thetas(thetas, &wd.basis, "ls", None)
}

pub fn awls_estimate(wd: &WeightedData) -> Result<Estimate> {
    let thetas = wd.outcomes.iter().map(awls_theta).collect::<Result<Vec<_>>>()?;
    Estimate::from_thetas(thetas, &wd.basis, "awls", None)
}

/// Regularized estimate with one kernel shared by all outcomes. Adaptive
/// kernels run their first step on the same data.
pub fn rwls_estimate(wd: &WeightedData, kernel: &KernelSpec) -> Result<Estimate> {
    kernel.validate()?;
    let first = match kernel.adaptive_base() {
        Some(base) => Some(rwls_estimate(wd, base)?.thetas()),
        None => None,
    };
    let k = wd.k();
    let thetas = wd
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let ctx = first.as_ref().map(|f| &f[i]);
            let mk = materialize(kernel, k, i, ctx, wd.sigma)?;
            check_kernel_psd(&mk)?;
            rwls_theta(o, &mk, wd.sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    Estimate::from_thetas(thetas, &wd.basis, "rwls", Some(kernel.clone()))
}

/// Two-step adaptive estimate; `fullrank` adds the first-step kernel back.
pub fn adaptive_estimate(wd: &WeightedData, step1: &KernelSpec, fullrank: bool) -> Result<Estimate> {
    let base = Box::new(step1.clone());
    let kernel = if fullrank {
        KernelSpec::FullrankAdaptive { base }
    } else {
        KernelSpec::Rank1Adaptive { base }
    };
    rwls_estimate(wd, &kernel)
}

#[derive(Debug, Clone)]
pub struct MsemReport {
    pub msem: RMat,
    pub bias: RVec,
    pub trace: f64,
}

/// Exact MSE matrix and bias of the regularized estimator for a fixed
/// normal matrix `r`. The pseudo-inverse estimator is covered when no
/// regularization is applied and `r` is singular.
pub fn msem_closed_form(r: &RMat, mk: &Materialized, theta: &RVec, sigma: f64) -> Result<MsemReport> {
    let k = r.nrows();
    if theta.len() != k || !r.is_square() {
        return Err(shape_err("MSEM inputs have inconsistent sizes"));
    }
    let s2 = sigma * sigma;
    let not_comp = |e: QdtError| match e {
        QdtError::NotIdentifiable(m) => QdtError::NotComputable(m),
        other => other,
    };
    let h = mk.s.as_ref().filter(|_| s2 > 0.0).and_then(psd_sqrt);
    let (msem, bias) = if let Some(h) = h {
        // (S R + s2 I)^{-1} S = H (H R H + s2 I)^{-1} H with H = S^{1/2}. The
        // symmetric middle factor is diagonalized, which keeps directions with
        // large H R H accurate where an LU solve of S R + s2 I loses them.
        let (mu, v) = sym_eigen_desc(&(&h * sym_part(r) * &h));
        let hv = &h * v;
        let spectral = |f: &dyn Fn(f64) -> f64| {
            let mut m = hv.clone();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col *= f(mu[j].max(0.0));
            }
            m * hv.transpose()
        };
        let g = spectral(&|m| 1.0 / (m + s2));
        let var = spectral(&|m| s2 * m / ((m + s2) * (m + s2)));
        let bias = &g * (r * theta) - theta;
        (var + outer(&bias), bias)
    } else if let Some(s) = &mk.s {
        // A = (S R + s2 I)^{-1}; (R S + s2 I)^{-1} = A^T
        let a = solve_guarded(&(s * r + RMat::identity(k, k) * s2), &RMat::identity(k, k))
            .map_err(not_comp)?;
        let mid = s * r * s * s2 + outer(theta) * (s2 * s2);
        let bias = -(&a * theta) * s2;
        (&a * mid * a.transpose(), bias)
    } else {
        let d = mk
            .d
            .as_ref()
            .ok_or_else(|| QdtError::NotComputable("kernel produced neither S nor D".into()))?;
        if d.iter().all(|&x| x == 0.0) {
            if condition_number(r) <= cond_limit() {
                let inv = solve_guarded(r, &RMat::identity(k, k)).map_err(not_comp)?;
                (inv * s2, RVec::zeros(k))
            } else {
                let rp = pinv(r, RANK_RTOL);
                let resid = RMat::identity(k, k) - &rp * r;
                let bias = -(&resid * theta);
                (&rp * s2 + outer(&bias), bias)
            }
        } else {
            let inv = solve_guarded(&(r + d), &RMat::identity(k, k)).map_err(not_comp)?;
            let dt = d * theta;
            let mid = r * s2 + outer(&dt);
            let bias = -(&inv * dt);
            (&inv * mid * &inv, bias)
        }
    };
    let msem = sym_part(&msem);
    let trace = msem.trace();
    Ok(MsemReport { msem, bias, trace })
}

/// `S^{1/2}` for symmetric PSD `S`; `None` when `S` is indefinite.
fn psd_sqrt(s: &RMat) -> Option<RMat> {
    let (vals, vecs) = sym_eigen_desc(s);
    let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if vals.iter().any(|&v| v < -1e-12 * top) {
        return None;
    }
    let mut m = vecs.clone();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= vals[j].max(0.0).sqrt();
    }
    Some(m * vecs.transpose())
}

pub fn total_ls_mse(reports: &[MsemReport]) -> f64 {
    reports.iter().map(|r| r.trace).sum()
}

/// Closed-form reports for every outcome of `wd` under `kernel`. The normal
/// matrices come from `wd`, so oracle weights give the exact Gaussian-model
/// MSE.
pub fn msem_reports(wd: &WeightedData, kernel: &KernelSpec, thetas: &[RVec]) -> Result<Vec<MsemReport>> {
    if kernel.is_adaptive() {
        return Err(QdtError::NotComputable(
            "adaptive kernels depend on the data; no closed-form MSEM".into(),
        ));
    }
    if thetas.len() != wd.n() {
        return Err(shape_err("one true theta per outcome is required"));
    }
    wd.outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mk = materialize(kernel, wd.k(), i, None, wd.sigma)?;
            msem_closed_form(&o.r, &mk, &thetas[i], wd.sigma)
        })
        .collect()
}
