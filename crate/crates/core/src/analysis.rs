//! Theory checks on the limiting information matrix `B`: range condition,
//! membership of the optimal kernel set, minimum MSE, and the spectrum of `S B`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::detector::Povm;
use crate::error::{shape_err, QdtError, Result};
use crate::kernels::{materialize, KernelSpec};
use crate::linalg::{outer, pinv, range_and_null, rank, svd_sorted, sym_part, RMat, RVec, RANK_RTOL};
use crate::measurement::born_probabilities;
use crate::states::ProbeSet;

/// True probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// forming variances.
pub const PROB_CLAMP: f64 = 1e-9;

/// `B = sum_j h_j phi_j phi_j^T / v_j` together with its pseudo-inverse.
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    pub b: RMat,
    pub pinv: RMat,
    pub rank: usize,
    /// How many probabilities had to be clamped.
    pub clamped: usize,
}

impl InfoMatrix {
    /// From a design with per-probe fractions `h` and noise variances `var`.
    pub fn from_design(x: &RMat, h: &[f64], var: &[f64]) -> Result<Self> {
        let m = x.nrows();
        if h.len() != m || var.len() != m {
            return Err(shape_err(format!(
                "need {m} fractions and variances, got {} and {}",
                h.len(),
                var.len()
            )));
        }
        check_fractions(h)?;
        let mut xs = x.clone();
        for j in 0..m {
            if var[j] <= 0.0 {
                return Err(QdtError::InvalidDistribution(format!(
                    "variance of probe {j} must be positive"
                )));
            }
            xs.row_mut(j).scale_mut((h[j] / var[j]).sqrt());
        }
        Ok(Self::from_matrix(sym_part(&(xs.transpose() * xs)), 0))
    }

    pub fn from_matrix(b: RMat, clamped: usize) -> Self {
        let pinv = pinv(&b, RANK_RTOL);
        let rank = rank(&b, RANK_RTOL);
        Self {
            b,
            pinv,
            rank,
            clamped,
        }
    }

    /// Orthogonal projector onto `range(B)`.
    pub fn range_projector(&self) -> RMat {
        &self.pinv * &self.b
    }
}

fn check_fractions(h: &[f64]) -> Result<()> {
    let sum: f64 = h.iter().sum();
    if h.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(QdtError::InvalidDistribution(format!(
            "shot fractions must be non-negative and sum to 1, got sum {sum}"
        )));
    }
    Ok(())
}

/// One information matrix per outcome, using the true probabilities.
pub fn compute_b(probes: &ProbeSet, povm: &Povm, h: &[f64]) -> Result<Vec<InfoMatrix>> {
    let p = born_probabilities(povm, probes)?;
    let m = probes.len();
    (0..povm.n())
        .map(|i| {
            let mut clamped = 0;
            let var: Vec<f64> = (0..m)
                .map(|j| {
                    let raw = p[(i, j)];
                    let q = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    if q != raw {
                        clamped += 1;
                    }
                    q - q * q
                })
                .collect();
            let mut info = InfoMatrix::from_design(&probes.x, h, &var)?;
            info.clamped = clamped;
            Ok(info)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeVerdict {
    pub holds: bool,
    /// `|(I - Pi) theta| / |theta|`.
    pub residual: f64,
}

/// Whether `theta` lies in `range(S B)`.
pub fn range_condition(theta: &RVec, s: &RMat, b: &RMat, rtol: f64) -> Result<RangeVerdict> {
    let k = theta.len();
    if s.shape() != (k, k) || b.shape() != (k, k) {
        return Err(shape_err("range condition inputs have inconsistent sizes"));
    }
    let tn = theta.norm();
    if tn == 0.0 {
        return Ok(RangeVerdict {
            holds: true,
            residual: 0.0,
        });
    }
    let (u, _) = range_and_null(&(s * b), RANK_RTOL);
    let resid = theta - &u * (u.transpose() * theta);
    let residual = resid.norm() / tn;
    Ok(RangeVerdict {
        holds: residual <= rtol,
        residual,
    })
}

/// Limit of the regularized estimate as the shot count grows: the oblique
/// projection of `theta` onto `range(S B)` along `null(S B)`.
pub fn asymptotic_estimate(theta: &RVec, s: &RMat, b: &RMat) -> Result<RVec> {
    let k = theta.len();
    let (range, null) = range_and_null(&(s * b), RANK_RTOL);
    let r = range.ncols();
    if r == k {
        return Ok(theta.clone());
    }
    let mut basis = RMat::zeros(k, k);
    basis.columns_mut(0, r).copy_from(&range);
    basis.columns_mut(r, k - r).copy_from(&null);
    let coef = basis
        .lu()
        .solve(theta)
        .ok_or_else(|| QdtError::NotComputable("range and null space of S B overlap".into()))?;
    Ok(range * coef.rows(0, r))
}

/// Range verdict for a kernel spec. Adaptive kernels are judged with their
/// first-step estimate replaced by its large-N limit; an unregularized
/// estimator behaves like `S = I`.
pub fn kernel_range_condition(kernel: &KernelSpec, theta: &RVec, b: &RMat, outcome: usize, rtol: f64) -> Result<RangeVerdict> {
    let k = theta.len();
    let s = kernel_matrix(kernel, theta, b, outcome)?;
    let s = s.unwrap_or_else(|| RMat::identity(k, k));
    range_condition(theta, &s, b, rtol)
}

fn kernel_matrix(kernel: &KernelSpec, theta: &RVec, b: &RMat, outcome: usize) -> Result<Option<RMat>> {
    let k = theta.len();
    if let KernelSpec::BestOracle { theta: None } = kernel {
        return Ok(Some(outer(theta)));
    }
    let ctx = match kernel.adaptive_base() {
        Some(base) => {
            let s1 = kernel_matrix(base, theta, b, outcome)?.unwrap_or_else(|| RMat::identity(k, k));
            Some(asymptotic_estimate(theta, &s1, b)?)
        }
        None => None,
    };
    Ok(materialize(kernel, k, outcome, ctx.as_ref(), 1.0)?.s)
}

/// Whether `S` belongs to the set of kernels attaining the minimum MSE:
/// symmetric PSD with `B~ B S = theta theta^T`. Requires `theta` in `range(B)`.
pub fn gamma_membership(s: &RMat, theta: &RVec, info: &InfoMatrix, tol: f64) -> Result<bool> {
    let k = theta.len();
    if s.shape() != (k, k) || info.b.shape() != (k, k) {
        return Err(shape_err("membership inputs have inconsistent sizes"));
    }
    let ident = range_condition(theta, &RMat::identity(k, k), &info.b, 1e-8)?;
    if !ident.holds {
        return Err(QdtError::NotApplicable(format!(
            "theta is not identifiable (range residual {:.3e})",
            ident.residual
        )));
    }
    let scale = s.norm().max(1.0);
    if (s - s.transpose()).norm() > tol * scale {
        return Ok(false);
    }
    if crate::linalg::min_eigenvalue_sym(&sym_part(s)) < -tol * scale {
        return Ok(false);
    }
    let lhs = info.range_projector() * s;
    Ok((lhs - outer(theta)).norm() <= tol * (1.0 + theta.norm_squared()))
}

/// `Tr[theta theta^T (N B theta theta^T + I)^{-1}]`.
pub fn min_mse_value(theta: &RVec, b: &RMat, n: f64) -> Result<f64> {
    let k = theta.len();
    if b.shape() != (k, k) {
        return Err(shape_err("min MSE inputs have inconsistent sizes"));
    }
    let m = b * outer(theta) * n + RMat::identity(k, k);
    // M^T x = theta gives theta^T M^{-1} theta = x^T theta
    let x = m
        .transpose()
        .lu()
        .solve(theta)
        .ok_or_else(|| QdtError::NotComputable("N B theta theta^T + I is singular".into()))?;
    Ok(x.dot(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityVerdict {
    pub holds: bool,
    pub min_eigenvalue: f64,
    pub max_imag: f64,
    pub eigvec_condition: f64,
}

const SIM_EIG_TOL: f64 = 1e-8;
const SIM_COND_LIMIT: f64 = 1e10;

/// Checks that `S B` has a real non-negative spectrum and a well-conditioned
/// eigenvector matrix.
pub fn similarity_check(s: &RMat, b: &RMat) -> Result<SimilarityVerdict> {
    let k = s.nrows();
    if !s.is_square() || b.shape() != (k, k) {
        return Err(shape_err("similarity inputs have inconsistent sizes"));
    }
    let sb = s * b;
    let scale = sb.norm().max(1.0);
    let eig = sb.complex_eigenvalues();
    let max_imag = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let mut vals: Vec<f64> = eig.iter().map(|z| z.re).collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    let min_eigenvalue = vals.first().copied().unwrap_or(0.0);

    let spectrum_ok = max_imag <= SIM_EIG_TOL * scale && min_eigenvalue >= -SIM_EIG_TOL * scale;
    let eigvec_condition = if max_imag <= SIM_EIG_TOL * scale {
        eigenvector_condition(&sb, &vals, scale)
    } else {
        f64::INFINITY
    };
    Ok(SimilarityVerdict {
        holds: spectrum_ok && eigvec_condition < SIM_COND_LIMIT,
        min_eigenvalue,
        max_imag,
        eigvec_condition,
    })
}

/// Eigenvectors per cluster of (nearly) equal eigenvalues, taken as the
/// smallest right singular vectors of `A - lambda I`. A cluster whose
/// geometric multiplicity falls short makes the result infinite.
fn eigenvector_condition(a: &RMat, sorted: &[f64], scale: f64) -> f64 {
    let k = a.nrows();
    let cluster_tol = 1e-6 * scale;
    let null_tol = 1e-6 * scale;
    let mut cols: Vec<RVec> = Vec::with_capacity(k);
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && sorted[end] - sorted[end - 1] <= cluster_tol {
            end += 1;
        }
        let mult = end - start;
        let lam = sorted[start..end].iter().sum::<f64>() / mult as f64;
        let shifted = a - RMat::identity(k, k) * lam;
        let svd = svd_sorted(&shifted);
        if svd.s[k - mult] > null_tol {
            return f64::INFINITY;
        }
        for c in k - mult..k {
            cols.push(svd.v.column(c).into_owned());
        }
        start = end;
    }
    let v = DMatrix::from_columns(&cols);
    let s = svd_sorted(&v).s;
    if s[k - 1] == 0.0 {
        f64::INFINITY
    } else {
        s[0] / s[k - 1]
    }
}

/// Least-squares slope of `log10 mse` against `log10 n` over the points in
/// the top decade of `n`. `None` with fewer than two usable points.
pub fn fit_slope(ns: &[f64], mses: &[f64]) -> Option<f64> {
    let nmax = ns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(mses)
        .filter(|(&n, &e)| n > 0.0 && e > 0.0 && e.is_finite() && n >= nmax / 10.0 * (1.0 - 1e-12))
        .map(|(&n, &e)| (n.log10(), e.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisOrdering, HermitianBasis};
    use crate::detector::{example_detector, ExampleDetector};
    use crate::estimators::msem_closed_form;
    use crate::kernels::Materialized;
    use crate::rng::seeded;
    use crate::states::{build_probe_set, haar_probe_states};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn gauss(r: usize, c: usize, rng: &mut impl Rng) -> RMat {
        RMat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn gvec(k: usize, rng: &mut impl Rng) -> RVec {
        RVec::from_fn(k, |_, _| rng.sample(StandardNormal))
    }

    fn haar_set(m: usize, seed: u64) -> ProbeSet {
        let basis = Arc::new(HermitianBasis::build(4, BasisOrdering::GellmannDefault).unwrap());
        let states = haar_probe_states(4, m, &mut seeded(seed)).unwrap();
        build_probe_set(states, basis).unwrap()
    }

    #[test]
    fn orthogonal_rows_give_diagonal_b() {
        let x = RMat::identity(4, 4) * 2.0;
        let info = InfoMatrix::from_design(&x, &[0.25; 4], &[1.0; 4]).unwrap();
        assert!((info.b.clone() - RMat::identity(4, 4)).norm() < 1e-14);
        assert_eq!(info.rank, 4);
    }

    #[test]
    fn uniform_unit_variance_is_gram_over_m() {
        let mut rng = seeded(1);
        let x = gauss(7, 5, &mut rng);
        let info = InfoMatrix::from_design(&x, &[1.0 / 7.0; 7], &[1.0; 7]).unwrap();
        assert!((&info.b - x.transpose() * &x / 7.0).norm() < 1e-10);
        assert!((&info.b * &info.pinv * &info.b - &info.b).norm() < 1e-8);
    }

    #[test]
    fn b_rank_follows_probe_count() {
        let povm = example_detector(ExampleDetector::PaperD4).unwrap();
        let full = haar_set(20, 9);
        for info in compute_b(&full, &povm, &[0.05; 20]).unwrap() {
            assert_eq!(info.rank, 16);
        }
        let few = haar_set(10, 9);
        for info in compute_b(&few, &povm, &[0.1; 10]).unwrap() {
            assert!(info.rank <= 10);
        }
        assert!(compute_b(&few, &povm, &[0.2; 10]).is_err());
    }

    #[test]
    fn range_full_rank_always_holds() {
        let mut rng = seeded(2);
        let a = gauss(4, 4, &mut rng);
        let s = &a * a.transpose() + RMat::identity(4, 4);
        let b = RMat::identity(4, 4) * 3.0;
        let v = range_condition(&gvec(4, &mut rng), &s, &b, 1e-9).unwrap();
        assert!(v.holds && v.residual < 1e-12);
        assert!(range_condition(&RVec::zeros(4), &s, &b, 1e-9).unwrap().holds);
    }

    #[test]
    fn oracle_kernel_range_holds_with_singular_b() {
        let theta = RVec::from_vec(vec![1.0, 2.0, 0.5, -1.0]);
        let b = RMat::from_diagonal(&RVec::from_vec(vec![1.0, 0.0, 2.0, 0.0]));
        assert!(range_condition(&theta, &outer(&theta), &b, 1e-9).unwrap().holds);
    }

    #[test]
    fn misaligned_rank_one_kernel_fails() {
        // range(S B) = span(v); theta has a component orthogonal to v
        let v = RVec::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let theta = RVec::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let b = RMat::identity(4, 4);
        let r = range_condition(&theta, &outer(&v), &b, 1e-9).unwrap();
        assert!(!r.holds);
        assert!((r.residual - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_estimate_is_oblique_projection() {
        let mut rng = seeded(3);
        let k = 6;
        let xr = gauss(3, k, &mut rng);
        let b = xr.transpose() * &xr;
        let a = gauss(k, k, &mut rng);
        let s = &a * a.transpose() + RMat::identity(k, k);
        let theta = gvec(k, &mut rng);
        let lim = asymptotic_estimate(&theta, &s, &b).unwrap();
        let sb = &s * &b;
        // lim lies in range(S B) and theta - lim in null(S B)
        assert!((&sb * (&theta - &lim)).norm() < 1e-10 * theta.norm());
        let (range, _) = range_and_null(&sb, RANK_RTOL);
        assert!((&lim - &range * (range.transpose() * &lim)).norm() < 1e-10 * theta.norm());
        // (N S B + I)^{-1} N S B theta approaches it like 1/N
        let at = |n: f64| {
            let direct = (&sb * n + RMat::identity(k, k)).lu().solve(&(&sb * &theta * n)).unwrap();
            (&lim - direct).norm()
        };
        // roundoff takes over beyond N ~ 1e6
        let (e2, e5) = (at(1e2), at(1e5));
        assert!((e2 / e5 - 1e3).abs() < 10.0, "{e2} {e5}");
    }

    #[test]
    fn gamma_member_and_perturbation() {
        let mut rng = seeded(4);
        let k = 5;
        let xr = gauss(3, k, &mut rng);
        let b = xr.transpose() * &xr;
        let info = InfoMatrix::from_matrix(b.clone(), 0);
        let (range, null) = range_and_null(&b, RANK_RTOL);
        let theta = &range * gvec(range.ncols(), &mut rng);
        let z = gauss(null.ncols(), null.ncols(), &mut rng);
        let s = outer(&theta) + &null * (&z * z.transpose()) * null.transpose();
        assert!(gamma_membership(&s, &theta, &info, 1e-8).unwrap());
        assert!(gamma_membership(&outer(&theta), &theta, &info, 1e-8).unwrap());
        let e = gauss(range.ncols(), range.ncols(), &mut rng);
        let pert = &s + &range * (&e * e.transpose()) * range.transpose() * 1e-2;
        assert!(!gamma_membership(&pert, &theta, &info, 1e-8).unwrap());
        let off = &theta + &null.column(0) * 1.0;
        assert!(matches!(
            gamma_membership(&s, &off, &info, 1e-8),
            Err(QdtError::NotApplicable(_))
        ));
    }

    #[test]
    fn min_mse_examples() {
        let t = RVec::from_vec(vec![2.0]);
        let b = RMat::from_element(1, 1, 1.0);
        assert!((min_mse_value(&t, &b, 1.0).unwrap() - 0.8).abs() < 1e-15);
        let mut rng = seeded(5);
        let theta = gvec(4, &mut rng);
        let xr = gauss(6, 4, &mut rng);
        let b = xr.transpose() * xr;
        assert!((min_mse_value(&theta, &b, 0.0).unwrap() - theta.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn min_mse_matches_oracle_msem() {
        let mut rng = seeded(6);
        for _ in 0..20 {
            let k = 4;
            let xr = gauss(6, k, &mut rng);
            let b = xr.transpose() * xr;
            let theta = gvec(k, &mut rng);
            let n = 1e3;
            let mk = Materialized {
                s: Some(outer(&theta)),
                d: None,
            };
            let rep = msem_closed_form(&(&b * n), &mk, &theta, 1.0).unwrap();
            let v = min_mse_value(&theta, &b, n).unwrap();
            assert!((rep.trace - v).abs() < 1e-10 * (1.0 + v));
        }
    }

    #[test]
    fn similarity_examples() {
        let i = RMat::identity(4, 4);
        let v = similarity_check(&i, &i).unwrap();
        assert!(v.holds && (v.eigvec_condition - 1.0).abs() < 1e-12);
        let mut rng = seeded(7);
        for _ in 0..100 {
            let a = gauss(16, 16, &mut rng);
            let c = gauss(16, 10, &mut rng);
            let s = &a * a.transpose();
            let b = &c * c.transpose();
            assert!(similarity_check(&s, &b).unwrap().holds);
        }
        let bad = RMat::from_diagonal(&RVec::from_vec(vec![1.0, -1.0]));
        assert!(!similarity_check(&RMat::identity(2, 2), &bad).unwrap().holds);
        let jordan = RMat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(!similarity_check(&RMat::identity(2, 2), &jordan).unwrap().holds);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let ns = [1e4, 1e5, 1e6, 1e7];
        let mses: Vec<f64> = ns.iter().map(|n| 3.0 / n).collect();
        assert!((fit_slope(&ns, &mses).unwrap() + 1.0).abs() < 1e-12);
        assert!(fit_slope(&[1e4], &[1.0]).is_none());
        // points below the top decade are ignored
        let bent = [1.0, 1e-1, 3e-6, 3e-7];
        assert!((fit_slope(&ns, &bent).unwrap() + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn min_mse_sherman_morrison(seed in 0u64..500, n in 0.0f64..1e6) {
            let mut rng = seeded(seed);
            let k = 3;
            let xr = gauss(4, k, &mut rng);
            let b = xr.transpose() * xr;
            let theta = gvec(k, &mut rng);
            let q = theta.dot(&(&b * &theta));
            let oracle = theta.norm_squared() / (1.0 + n * q);
            let v = min_mse_value(&theta, &b, n).unwrap();
            // LU on a matrix with condition ~ N q loses that many digits
            prop_assert!((v - oracle).abs() <= 1e-14 * (1.0 + n * q) * oracle + 1e-300);
        }

        #[test]
        fn min_mse_decreasing(seed in 0u64..200) {
            let mut rng = seeded(seed);
            let xr = gauss(5, 4, &mut rng);
            let b = xr.transpose() * xr;
            let theta = gvec(4, &mut rng);
            let mut prev = f64::INFINITY;
            for e in 0..8 {
                let v = min_mse_value(&theta, &b, 10f64.powi(e)).unwrap();
                prop_assert!(v < prev);
                prev = v;
            }
        }
    }
}
