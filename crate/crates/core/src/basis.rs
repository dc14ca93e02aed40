//! Orthonormal Hermitian operator bases and the matrix <-> coefficient maps.
//!
//! A basis `{Omega_a}` satisfies `Tr(Omega_a Omega_b) = delta_ab` with
//! `Omega_1 = I / sqrt(d)` and every other element traceless. Hermitian
//! matrices are represented by real coefficient vectors `v_a = Tr(Omega_a H)`.
//!
//! Two full orderings are provided:
//!
//! * `GellmannDefault`: identity first, then the real-symmetric off-diagonal
//!   generators in row-major `(j, k)` order, then the imaginary antisymmetric
//!   generators in the same order, then the traceless diagonal generators
//!   `diag(1, .., 1, -l, 0, ..) / sqrt(l (l + 1))` for `l = 1 .. d-1`.
//! * `PauliTensor` (d a power of two): normalized k-fold Pauli products. All
//!   `{I, Z}` strings come first, then the remaining strings; within each group
//!   strings are ordered lexicographically over the alphabet `I < Z < X < Y`
//!   with the first tensor factor most significant. For d = 2 this yields
//!   `{I, Z, X, Y} / sqrt(2)`.
//!
//! A block-diagonal sub-basis (not complete for the full space) is available
//! for detectors known to be block diagonal; see [`HermitianBasis::block_diagonal`].

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, QdtError, Result};
use crate::linalg::{c, hermitian_deviation, hermitian_part, kron, CMat, RVec};

/// Tolerance on the Hermiticity of inputs to [`HermitianBasis::parameterize`].
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisOrdering {
    GellmannDefault,
    PauliTensor,
}

/// Index convention of a basis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisLayout {
    GellmannDefault,
    PauliTensor,
    /// Gell-Mann bases of each diagonal block, concatenated block by block.
    Block(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    Lambda,
    Theta,
    Phi,
}

/// Real coefficient vector of a Hermitian operator in some basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    pub values: RVec,
    pub kind: CoeffKind,
}

impl CoeffVector {
    pub fn new(values: RVec, kind: CoeffKind) -> Self {
        Self { values, kind }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct HermitianBasis {
    dim: usize,
    ops: Vec<CMat>,
    layout: BasisLayout,
    identity: RVec,
}

impl HermitianBasis {
    /// Build a complete orthonormal basis of `d x d` Hermitian matrices.
    pub fn build(d: usize, ordering: BasisOrdering) -> Result<Self> {
        if d < 2 {
            return Err(QdtError::InvalidDimension(format!(
                "basis dimension must be at least 2, got {d}"
            )));
        }
        let (ops, layout) = match ordering {
            BasisOrdering::GellmannDefault => (gellmann_ops(d), BasisLayout::GellmannDefault),
            BasisOrdering::PauliTensor => {
                if !d.is_power_of_two() {
                    return Err(QdtError::UnsupportedOrdering(format!(
                        "pauli_tensor needs a power-of-two dimension, got {d}"
                    )));
                }
                (pauli_ops(d.trailing_zeros() as usize), BasisLayout::PauliTensor)
            }
        };
        Ok(Self::from_parts(d, ops, layout))
    }

    /// Orthonormal basis of the block-diagonal Hermitian matrices with the
    /// given block sizes. Spans `sum d_j^2` dimensions instead of `d^2`.
    pub fn block_diagonal(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(QdtError::InvalidDimension(format!(
                "block sizes must be positive, got {sizes:?}"
            )));
        }
        let d: usize = sizes.iter().sum();
        let mut ops = Vec::new();
        let mut offset = 0;
        for &s in sizes {
            for op in gellmann_ops(s) {
                let mut full = CMat::zeros(d, d);
                full.view_mut((offset, offset), (s, s)).copy_from(&op);
                ops.push(full);
            }
            offset += s;
        }
        Ok(Self::from_parts(d, ops, BasisLayout::Block(sizes.to_vec())))
    }

    fn from_parts(dim: usize, ops: Vec<CMat>, layout: BasisLayout) -> Self {
        let mut basis = Self {
            dim,
            ops,
            layout,
            identity: RVec::zeros(0),
        };
        basis.identity = basis.coefficients(&CMat::identity(dim, dim));
        basis
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis operators (`d^2` for complete bases).
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.ops.len() == self.dim * self.dim
    }

    pub fn ops(&self) -> &[CMat] {
        &self.ops
    }

    pub fn layout(&self) -> &BasisLayout {
        &self.layout
    }

    /// Coefficients of the identity; `(sqrt(d), 0, ..., 0)` for complete bases.
    pub fn identity_coeffs(&self) -> &RVec {
        &self.identity
    }

    /// Hilbert-Schmidt Gram matrix `Tr(Omega_a^dagger Omega_b)`.
    pub fn gram(&self) -> CMat {
        let k = self.ops.len();
        CMat::from_fn(k, k, |a, b| {
            self.ops[a]
                .iter()
                .zip(self.ops[b].iter())
                .map(|(x, y)| x.conj() * y)
                .sum()
        })
    }

    fn coefficients(&self, h: &CMat) -> RVec {
        // Tr(Omega H) = sum_{ij} Omega_ij H_ji, real for Hermitian arguments.
        let ht = h.transpose();
        RVec::from_iterator(
            self.ops.len(),
            self.ops.iter().map(|op| op.component_mul(&ht).sum().re),
        )
    }

    fn check_dim(&self, h: &CMat) -> Result<()> {
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(shape_err(format!(
                "expected {0}x{0} matrix, got {1}x{2}",
                self.dim,
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(())
    }

    /// Coefficients `Tr(Omega_a H)`; inputs within [`HERMITIAN_TOL`] of
    /// Hermitian are symmetrized first.
    pub fn parameterize(&self, h: &CMat, kind: CoeffKind) -> Result<CoeffVector> {
        Ok(CoeffVector::new(self.parameterize_raw(h)?, kind))
    }

    pub fn parameterize_raw(&self, h: &CMat) -> Result<RVec> {
        self.check_dim(h)?;
        let dev = hermitian_deviation(h);
        if dev > HERMITIAN_TOL {
            return Err(QdtError::SymmetryViolation(dev));
        }
        Ok(self.coefficients(&hermitian_part(h)))
    }

    /// `sum_a v_a Omega_a`.
    pub fn deparameterize(&self, v: &RVec) -> Result<CMat> {
        if v.len() != self.ops.len() {
            return Err(shape_err(format!(
                "coefficient vector has length {}, basis has {} elements",
                v.len(),
                self.ops.len()
            )));
        }
        let mut out = CMat::zeros(self.dim, self.dim);
        for (op, &x) in self.ops.iter().zip(v.iter()) {
            if x != 0.0 {
                out += op * c(x, 0.0);
            }
        }
        Ok(hermitian_part(&out))
    }

    /// `theta = lambda - identity / n`.
    pub fn theta_from_lambda(&self, lambda: &CoeffVector, n: usize) -> Result<CoeffVector> {
        self.shift(lambda, n, -1.0, CoeffKind::Theta)
    }

    /// `lambda = theta + identity / n`.
    pub fn lambda_from_theta(&self, theta: &CoeffVector, n: usize) -> Result<CoeffVector> {
        self.shift(theta, n, 1.0, CoeffKind::Lambda)
    }

    fn shift(&self, v: &CoeffVector, n: usize, sign: f64, kind: CoeffKind) -> Result<CoeffVector> {
        if n == 0 {
            return Err(QdtError::InvalidDimension("outcome count must be >= 1".into()));
        }
        if v.len() != self.len() {
            return Err(shape_err(format!(
                "coefficient vector has length {}, basis has {}",
                v.len(),
                self.len()
            )));
        }
        let values = &v.values + &self.identity * (sign / n as f64);
        Ok(CoeffVector::new(values, kind))
    }
}

/// Coefficients of the identity in any complete basis: `(sqrt(d), 0, ..., 0)`.
pub fn identity_coefficients(d: usize) -> RVec {
    let mut v = RVec::zeros(d * d);
    v[0] = (d as f64).sqrt();
    v
}

fn gellmann_ops(d: usize) -> Vec<CMat> {
    let mut ops = Vec::with_capacity(d * d);
    ops.push(CMat::identity(d, d) * c(1.0 / (d as f64).sqrt(), 0.0));
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = CMat::zeros(d, d);
            m[(j, k)] = c(r, 0.0);
            m[(k, j)] = c(r, 0.0);
            ops.push(m);
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = CMat::zeros(d, d);
            m[(j, k)] = c(0.0, -r);
            m[(k, j)] = c(0.0, r);
            ops.push(m);
        }
    }
    for l in 1..d {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut m = CMat::zeros(d, d);
        for i in 0..l {
            m[(i, i)] = c(norm, 0.0);
        }
        m[(l, l)] = c(-(l as f64) * norm, 0.0);
        ops.push(m);
    }
    ops
}

fn pauli(idx: usize) -> CMat {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    match idx {
        0 => CMat::from_row_slice(2, 2, &[one, z, z, one]),
        1 => CMat::from_row_slice(2, 2, &[one, z, z, -one]),
        2 => CMat::from_row_slice(2, 2, &[z, one, one, z]),
        _ => CMat::from_row_slice(2, 2, &[z, c(0.0, -1.0), c(0.0, 1.0), z]),
    }
}

fn pauli_ops(qubits: usize) -> Vec<CMat> {
    let count = 1usize << (2 * qubits);
    let digits = |mut code: usize| -> Vec<usize> {
        let mut out = vec![0; qubits];
        for q in (0..qubits).rev() {
            out[q] = code % 4;
            code /= 4;
        }
        out
    };
    let (diag, rest): (Vec<usize>, Vec<usize>) =
        (0..count).partition(|&code| digits(code).iter().all(|&p| p < 2));
    let norm = 1.0 / ((1usize << qubits) as f64).sqrt();
    diag.into_iter()
        .chain(rest)
        .map(|code| {
            let mut m = CMat::from_element(1, 1, c(1.0, 0.0));
            for p in digits(code) {
                m = kron(&m, &pauli(p));
            }
            m * c(norm, 0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn gram_error(b: &HermitianBasis) -> f64 {
        let g = b.gram();
        let k = b.len();
        (g - CMat::identity(k, k)).norm()
    }

    #[test]
    fn rejects_small_dimension() {
        assert!(matches!(
            HermitianBasis::build(1, BasisOrdering::GellmannDefault),
            Err(QdtError::InvalidDimension(_))
        ));
    }

    #[test]
    fn pauli_needs_power_of_two() {
        assert!(matches!(
            HermitianBasis::build(3, BasisOrdering::PauliTensor),
            Err(QdtError::UnsupportedOrdering(_))
        ));
    }

    #[test]
    fn pauli_d2_order() {
        let b = HermitianBasis::build(2, BasisOrdering::PauliTensor).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [
            [c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)],
            [c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-r, 0.0)],
            [c(0.0, 0.0), c(r, 0.0), c(r, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(0.0, -r), c(0.0, r), c(0.0, 0.0)],
        ];
        for (op, e) in b.ops().iter().zip(expect.iter()) {
            assert!((op - CMat::from_row_slice(2, 2, e)).norm() < 1e-15);
        }
    }

    #[test]
    fn pauli_d4_starts_with_diagonal_strings() {
        let b = HermitianBasis::build(4, BasisOrdering::PauliTensor).unwrap();
        for op in &b.ops()[..4] {
            let off: f64 = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| op[(i, j)].norm())
                .sum();
            assert_eq!(off, 0.0);
        }
        // I (x) Z comes before Z (x) I
        assert!((b.ops()[1][(1, 1)].re + 0.5).abs() < 1e-15);
        assert!((b.ops()[2][(2, 2)].re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gram_is_identity_for_all_layouts() {
        for d in 2..=6 {
            let b = HermitianBasis::build(d, BasisOrdering::GellmannDefault).unwrap();
            assert_eq!(b.len(), d * d);
            assert!(gram_error(&b) < 1e-12, "d = {d}");
        }
        for d in [2, 4, 8] {
            let b = HermitianBasis::build(d, BasisOrdering::PauliTensor).unwrap();
            assert!(gram_error(&b) < 1e-12, "d = {d}");
        }
        let b = HermitianBasis::block_diagonal(&[1, 2, 3]).unwrap();
        assert_eq!(b.len(), 14);
        assert!(gram_error(&b) < 1e-12);
    }

    #[test]
    fn first_element_is_scaled_identity_rest_traceless() {
        let b = HermitianBasis::build(3, BasisOrdering::GellmannDefault).unwrap();
        let first = &b.ops()[0];
        assert_eq!(*first, CMat::identity(3, 3) * c(1.0 / 3f64.sqrt(), 0.0));
        for op in &b.ops()[1..] {
            assert!(op.trace().norm() < 1e-12);
            assert!(hermitian_deviation(op) < 1e-12);
        }
    }

    #[test]
    fn parameterize_identity_and_diag() {
        let b = HermitianBasis::build(2, BasisOrdering::PauliTensor).unwrap();
        let v = b.parameterize_raw(&CMat::identity(2, 2)).unwrap();
        assert!((v[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(v.iter().skip(1).all(|x| x.abs() < 1e-15));

        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.2, 0.0), c(0.8, 0.0)]));
        let v = b.parameterize_raw(&h).unwrap();
        assert!((v[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert!((v[1] + 0.42426).abs() < 1e-5);
        assert!(v[2].abs() < 1e-15 && v[3].abs() < 1e-15);
    }

    #[test]
    fn deparameterize_basic_cases() {
        let b = HermitianBasis::build(2, BasisOrdering::PauliTensor).unwrap();
        let i = b
            .deparameterize(&RVec::from_vec(vec![2f64.sqrt(), 0.0, 0.0, 0.0]))
            .unwrap();
        assert!((i - CMat::identity(2, 2)).norm() < 1e-15);
        assert_eq!(b.deparameterize(&RVec::zeros(4)).unwrap(), CMat::zeros(2, 2));
        assert!(matches!(
            b.deparameterize(&RVec::zeros(3)),
            Err(QdtError::Shape(_))
        ));
    }

    #[test]
    fn rejects_non_hermitian() {
        let b = HermitianBasis::build(2, BasisOrdering::GellmannDefault).unwrap();
        let mut h = CMat::identity(2, 2);
        h[(0, 1)] = C64::new(0.3, 0.0);
        assert!(matches!(
            b.parameterize_raw(&h),
            Err(QdtError::SymmetryViolation(_))
        ));
    }

    #[test]
    fn theta_lambda_shift() {
        let b = HermitianBasis::build(2, BasisOrdering::PauliTensor).unwrap();
        let lam = b.parameterize(&CMat::identity(2, 2), CoeffKind::Lambda).unwrap();
        let th = b.theta_from_lambda(&lam, 1).unwrap();
        assert!(th.values.norm() < 1e-15);
        let th2 = b.theta_from_lambda(&lam, 2).unwrap();
        assert!((th2.values[0] - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let back = b.lambda_from_theta(&th2, 2).unwrap();
        assert!((back.values - lam.values).norm() < 1e-15);
    }

    #[test]
    fn block_identity_coefficients() {
        let b = HermitianBasis::block_diagonal(&[1, 2, 3]).unwrap();
        let id = b.identity_coeffs();
        assert!((id[0] - 1.0).abs() < 1e-15);
        assert!((id[1] - 2f64.sqrt()).abs() < 1e-15);
        assert!((id[5] - 3f64.sqrt()).abs() < 1e-15);
        assert!((id.norm_squared() - 6.0).abs() < 1e-12);
    }
}
