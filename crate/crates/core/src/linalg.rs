//! Dense linear-algebra helpers shared by the estimation and analysis code.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{QdtError, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Default largest condition number accepted by [`solve_guarded`] and friends.
pub const COND_LIMIT: f64 = 1e12;

static COND_LIMIT_BITS: AtomicU64 = AtomicU64::new(0x426D_1A94_A200_0000);

/// Current process-wide condition-number guard.
pub fn cond_limit() -> f64 {
    f64::from_bits(COND_LIMIT_BITS.load(Ordering::Relaxed))
}

/// Overrides the guard for the whole process (set once from the run config).
pub fn set_cond_limit(limit: f64) {
    COND_LIMIT_BITS.store(limit.to_bits(), Ordering::Relaxed);
}

/// Relative singular-value threshold for numerical rank and range tests.
pub const RANK_RTOL: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Frobenius norm of `m - m^dagger`.
pub fn hermitian_deviation(m: &CMat) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn sym_part(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| c(x, 0.0))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (RVec, CMat) {
    let eig = hermitian_part(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = RVec::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue_hermitian(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    hermitian_eigen(m).0[0]
}

pub fn min_eigenvalue_sym(m: &RMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_part(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Rebuild `V f(Lambda) V^dagger` for a Hermitian matrix.
pub fn hermitian_map(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let scaled = CMat::from_fn(vals.len(), vals.len(), |i, j| {
        if i == j {
            c(f(vals[i]), 0.0)
        } else {
            c(0.0, 0.0)
        }
    });
    &vecs * scaled * vecs.adjoint()
}

/// Symmetric eigen-decomposition, eigenvalues descending.
pub fn sym_eigen_desc(m: &RMat) -> (RVec, RMat) {
    let eig = sym_part(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = RVec::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = RMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Singular value decomposition with singular values sorted descending.
pub struct SortedSvd {
    pub u: RMat,
    pub s: RVec,
    pub v: RMat,
}

/// Symmetric input goes through the eigen-decomposition: the SVD routine can
/// return mismatched `u`/`v` columns when exact zero singular values occur.
pub fn svd_sorted(a: &RMat) -> SortedSvd {
    if a.is_square() && !a.is_empty() && (a - a.transpose()).amax() <= 1e-14 * a.amax() {
        let (vals, vecs) = sym_eigen_desc(a);
        let n = vals.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| vals[y].abs().total_cmp(&vals[x].abs()));
        let mut u = RMat::zeros(n, n);
        let mut v = RMat::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            let sign = if vals[i] < 0.0 { -1.0 } else { 1.0 };
            v.set_column(col, &vecs.column(i));
            u.set_column(col, &(vecs.column(i) * sign));
        }
        let s = RVec::from_iterator(n, order.iter().map(|&i| vals[i].abs()));
        return SortedSvd { u, s, v };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let s = RVec::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let mut us = RMat::zeros(u.nrows(), k);
    let mut vs = RMat::zeros(v.nrows(), k);
    for (col, &i) in order.iter().enumerate() {
        us.set_column(col, &u.column(i));
        vs.set_column(col, &v.column(i));
    }
    SortedSvd { u: us, s, v: vs }
}

pub fn condition_number(a: &RMat) -> f64 {
    let s = svd_sorted(a).s;
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank with threshold `rtol * sigma_max`.
pub fn rank(a: &RMat, rtol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let s = svd_sorted(a).s;
    let max = s.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rtol * max).count()
}

/// Solve `a x = b` for square `a`, refusing when cond(a) exceeds [`cond_limit`].
pub fn solve_guarded(a: &RMat, b: &RMat) -> Result<RMat> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(QdtError::Shape(format!(
            "cannot solve {}x{} system with {} right-hand rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let svd = svd_sorted(a);
    let n = svd.s.len();
    if n == 0 {
        return Ok(RMat::zeros(0, b.ncols()));
    }
    let max = svd.s[0];
    let min = svd.s[n - 1];
    let limit = cond_limit();
    if max == 0.0 || min * limit < max {
        return Err(QdtError::NotIdentifiable(format!(
            "condition number {:.3e} exceeds {:.0e}",
            if min == 0.0 { f64::INFINITY } else { max / min },
            limit
        )));
    }
    let mut ut_b = svd.u.transpose() * b;
    for i in 0..n {
        let inv = 1.0 / svd.s[i];
        ut_b.row_mut(i).scale_mut(inv);
    }
    Ok(&svd.v * ut_b)
}

pub fn solve_vec_guarded(a: &RMat, b: &RVec) -> Result<RVec> {
    let bm = RMat::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_guarded(a, &bm)?;
    Ok(x.column(0).into_owned())
}

pub fn inverse_guarded(a: &RMat) -> Result<RMat> {
    solve_guarded(a, &RMat::identity(a.nrows(), a.nrows()))
}

/// Moore-Penrose pseudo-inverse, singular values below `rtol * sigma_max` dropped.
pub fn pinv(a: &RMat, rtol: f64) -> RMat {
    let svd = svd_sorted(a);
    let mut out = RMat::zeros(a.ncols(), a.nrows());
    if svd.s.is_empty() || svd.s[0] == 0.0 {
        return out;
    }
    let cut = rtol * svd.s[0];
    for k in 0..svd.s.len() {
        if svd.s[k] > cut {
            out += svd.v.column(k) * svd.u.column(k).transpose() / svd.s[k];
        }
    }
    out
}

/// Orthonormal bases of range(a) and null(a) for square `a`.
pub fn range_and_null(a: &RMat, rtol: f64) -> (RMat, RMat) {
    let svd = svd_sorted(a);
    let n = a.ncols();
    let r = if svd.s.is_empty() || svd.s[0] == 0.0 {
        0
    } else {
        svd.s.iter().filter(|&&x| x > rtol * svd.s[0]).count()
    };
    let range = svd.u.columns(0, r).into_owned();
    let null = svd.v.columns(r, n - r).into_owned();
    (range, null)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn outer(v: &RVec) -> RMat {
    v * v.transpose()
}

/// Block-diagonal embedding of square blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(dim, dim);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `Re Tr(a b)` without forming the product.
pub fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let x = a[(i, k)] * b[(k, i)];
            acc += x.re;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_guard_bits() {
        assert_eq!(f64::from_bits(0x426D_1A94_A200_0000), COND_LIMIT);
    }

    #[test]
    fn guarded_solve_rejects_singular() {
        let a = RMat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = RVec::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_vec_guarded(&a, &b),
            Err(QdtError::NotIdentifiable(_))
        ));
    }

    #[test]
    fn guarded_solve_matches_direct() {
        let a = RMat::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = RVec::from_vec(vec![9.0, 8.0]);
        let x = solve_vec_guarded(&a, &b).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = RVec::from_vec(vec![1.0, 2.0, 2.0]);
        let a = outer(&v);
        let p = pinv(&a, RANK_RTOL);
        assert!((&a * &p * &a - &a).norm() < 1e-12);
        assert_eq!(rank(&a, RANK_RTOL), 1);
    }

    #[test]
    fn pinv_projector_idempotent_on_singular_grams() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(8);
        for k in 3..9 {
            for r in 1..k {
                let x = RMat::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
                let b = x.transpose() * &x;
                let p = pinv(&b, RANK_RTOL) * &b;
                assert!((&p * &p - &p).norm() < 1e-10, "k {k} r {r}");
                let (range, null) = range_and_null(&b, RANK_RTOL);
                assert_eq!((range.ncols(), null.ncols()), (r, k - r));
                assert!((range.transpose() * null).norm() < 1e-12);
            }
        }
        // an indefinite symmetric matrix keeps its signs
        let a = RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        assert!((pinv(&a, RANK_RTOL) * &a - RMat::identity(2, 2)).norm() < 1e-14);
        assert!((condition_number(&a) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn hermitian_map_sqrt() {
        let m = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let r = hermitian_map(&m, f64::sqrt);
        assert!((&r * &r - &m).norm() < 1e-12);
    }
}
