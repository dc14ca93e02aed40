//! Probe states and the probe parameterization matrix.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::HermitianBasis;
use crate::error::{shape_err, QdtError, Result};
use crate::linalg::{c, rank, CMat, RMat, C64, RANK_RTOL};

/// A (possibly truncated) density matrix.
///
/// `trace_deficit` is the probability mass lost by truncating an
/// infinite-dimensional state; it is zero for exact states.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub mat: CMat,
    pub trace_deficit: f64,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Projector onto `psi` with the deficit `1 - |psi|^2`.
    pub fn from_amplitudes(psi: &[C64]) -> Self {
        let v = nalgebra::DVector::from_column_slice(psi);
        let mat = &v * v.adjoint();
        let kept: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        Self {
            mat,
            trace_deficit: (1.0 - kept).max(0.0),
        }
    }

    /// Exact state from a matrix; the deficit is `1 - Tr(mat)`.
    pub fn from_matrix(mat: CMat) -> Self {
        let tr = crate::linalg::trace_re(&mat);
        Self {
            mat,
            trace_deficit: (1.0 - tr).max(0.0),
        }
    }
}

/// Haar-random pure state: normalized complex Gaussian vector.
pub fn random_pure_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<DensityMatrix> {
    if d < 2 {
        return Err(QdtError::InvalidDimension(format!(
            "pure state dimension must be >= 2, got {d}"
        )));
    }
    let mut psi: Vec<C64> = (0..d)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in psi.iter_mut() {
        *z /= norm;
    }
    let mut rho = DensityMatrix::from_amplitudes(&psi);
    rho.trace_deficit = 0.0;
    Ok(rho)
}

/// Coherent state `|alpha>` truncated to the Fock states `0..d`.
pub fn coherent_state_truncated(alpha: C64, d: usize) -> Result<DensityMatrix> {
    if d < 1 {
        return Err(QdtError::InvalidDimension("cutoff must be >= 1".into()));
    }
    let mut amp = Vec::with_capacity(d);
    let mut cur = c((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for i in 0..d {
        amp.push(cur);
        cur = cur * alpha / ((i + 1) as f64).sqrt();
    }
    Ok(DensityMatrix::from_amplitudes(&amp))
}

/// Dimension of the two-mode Fock space with at most `max_photons` in total.
pub fn two_mode_dim(max_photons: usize) -> usize {
    (max_photons + 1) * (max_photons + 2) / 2
}

/// Two-mode Fock labels `(j, k)` in total-photon-number-major order:
/// `|0,0>, |1,0>, |0,1>, |2,0>, |1,1>, |0,2>, ...`.
pub fn two_mode_labels(max_photons: usize) -> Vec<(usize, usize)> {
    (0..=max_photons)
        .flat_map(|n| (0..=n).map(move |k| (n - k, k)))
        .collect()
}

/// Two-mode coherent state `|alpha, beta e^{i delta}>` truncated to at most
/// `max_photons` photons in total.
pub fn two_mode_coherent(
    alpha: f64,
    beta: f64,
    delta: f64,
    max_photons: usize,
) -> Result<DensityMatrix> {
    if alpha < 0.0 || beta < 0.0 || !alpha.is_finite() || !beta.is_finite() {
        return Err(QdtError::InvalidAmplitude(format!(
            "amplitudes must be finite and non-negative, got ({alpha}, {beta})"
        )));
    }
    let pref = (-(alpha * alpha + beta * beta) / 2.0).exp();
    let amp: Vec<C64> = two_mode_labels(max_photons)
        .into_iter()
        .map(|(j, k)| {
            let mag = pref * alpha.powi(j as i32) * beta.powi(k as i32)
                / (factorial(j) * factorial(k)).sqrt();
            C64::from_polar(mag, k as f64 * delta)
        })
        .collect();
    Ok(DensityMatrix::from_amplitudes(&amp))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the phase fix
/// `R_ii / |R_ii|`.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<CMat> {
    if d < 1 {
        return Err(QdtError::InvalidDimension("unitary dimension must be >= 1".into()));
    }
    let g = CMat::from_fn(d, d, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal)) / 2f64.sqrt()
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { c(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

/// Probe states with their parameterization matrix (row j = phi_j).
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub states: Vec<DensityMatrix>,
    pub x: RMat,
    pub basis: Arc<HermitianBasis>,
    pub informationally_complete: bool,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn trace_deficits(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.trace_deficit).collect()
    }

    /// Probe subset in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<ProbeSet> {
        let states = idx
            .iter()
            .map(|&j| {
                self.states
                    .get(j)
                    .cloned()
                    .ok_or_else(|| shape_err(format!("probe index {j} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        build_probe_set(states, self.basis.clone())
    }
}

/// Parameterize every state and flag informational completeness
/// (`rank(X)` equal to the number of basis elements).
pub fn build_probe_set(states: Vec<DensityMatrix>, basis: Arc<HermitianBasis>) -> Result<ProbeSet> {
    if states.is_empty() {
        return Err(shape_err("probe set must contain at least one state"));
    }
    let k = basis.len();
    let mut x = RMat::zeros(states.len(), k);
    for (j, s) in states.iter().enumerate() {
        if s.dim() != basis.dim() {
            return Err(shape_err(format!(
                "probe {j} has dimension {}, basis has {}",
                s.dim(),
                basis.dim()
            )));
        }
        let phi = basis.parameterize_raw(&s.mat)?;
        x.set_row(j, &phi.transpose());
    }
    let informationally_complete = rank(&x, RANK_RTOL) == k;
    Ok(ProbeSet {
        states,
        x,
        basis,
        informationally_complete,
    })
}

/// `m` Haar-random pure states of dimension `d`.
pub fn haar_probe_states<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Vec<DensityMatrix>> {
    (0..m).map(|_| random_pure_state(d, rng)).collect()
}

/// `m` truncated coherent states with real and imaginary parts of `alpha`
/// uniform in `[-1, 1]`.
pub fn random_coherent_states<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Vec<DensityMatrix>> {
    (0..m)
        .map(|_| {
            let re = rng.random_range(-1.0..=1.0);
            let im = rng.random_range(-1.0..=1.0);
            coherent_state_truncated(c(re, im), d)
        })
        .collect()
}

/// One row of a two-mode probe table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModeProbe {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

/// Default 19-state two-mode table. Amplitudes are the experimental ones;
/// the phases are placeholders chosen to make the set complete on the
/// (1, 2, 3) block structure: eight phases `k pi/4` on the balanced pair,
/// four phases `k pi/2` on each unbalanced pair, phase 0 elsewhere.
pub fn default_two_mode_table() -> Vec<TwoModeProbe> {
    use std::f64::consts::FRAC_PI_4;
    let p = |alpha, beta, delta| TwoModeProbe { alpha, beta, delta };
    let mut t = vec![p(0.0, 0.0, 0.0), p(0.447, 0.0, 0.0), p(0.0, 0.447, 0.0)];
    t.extend((0..8).map(|k| p(0.316, 0.316, k as f64 * FRAC_PI_4)));
    t.extend((0..4).map(|k| p(0.194, 0.112, k as f64 * 2.0 * FRAC_PI_4)));
    t.extend((0..4).map(|k| p(0.112, 0.194, k as f64 * 2.0 * FRAC_PI_4)));
    t
}

pub fn two_mode_probe_states(table: &[TwoModeProbe], max_photons: usize) -> Result<Vec<DensityMatrix>> {
    table
        .iter()
        .map(|t| two_mode_coherent(t.alpha, t.beta, t.delta, max_photons))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOrdering;
    use crate::linalg::{min_eigenvalue_hermitian, trace_re};
    use crate::rng::seeded;

    #[test]
    fn pure_state_is_idempotent() {
        let mut rng = seeded(3);
        for d in [2, 4, 7] {
            let rho = random_pure_state(d, &mut rng).unwrap();
            assert!((trace_re(&rho.mat) - 1.0).abs() < 1e-12);
            assert!((&rho.mat * &rho.mat - &rho.mat).norm() < 1e-10);
            assert!(min_eigenvalue_hermitian(&rho.mat) > -1e-10);
        }
    }

    #[test]
    fn pure_state_deterministic() {
        let a = random_pure_state(4, &mut seeded(11)).unwrap();
        let b = random_pure_state(4, &mut seeded(11)).unwrap();
        assert_eq!(a.mat, b.mat);
    }

    #[test]
    fn haar_first_moment() {
        let mut rng = seeded(5);
        let d = 3;
        let draws = 10_000;
        let mut acc = CMat::zeros(d, d);
        for _ in 0..draws {
            acc += random_pure_state(d, &mut rng).unwrap().mat;
        }
        acc /= c(draws as f64, 0.0);
        let target = CMat::identity(d, d) / c(d as f64, 0.0);
        for (a, t) in acc.iter().zip(target.iter()) {
            assert!((a - t).norm() < 0.02);
        }
    }

    #[test]
    fn vacuum_coherent_state() {
        let rho = coherent_state_truncated(c(0.0, 0.0), 5).unwrap();
        assert_eq!(rho.trace_deficit, 0.0);
        assert!((rho.mat[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!(coherent_state_truncated(c(1e-6, 0.0), 4).unwrap().trace_deficit < 1e-11);
    }

    #[test]
    fn coherent_deficit_matches_series() {
        let rho = coherent_state_truncated(c(1.0, 0.0), 8).unwrap();
        let mut series = 0.0;
        let mut fact = 1.0;
        for i in 0..8 {
            if i > 0 {
                fact *= i as f64;
            }
            series += 1.0 / fact;
        }
        let expect = 1.0 - (-1.0f64).exp() * series;
        assert!((rho.trace_deficit - expect).abs() < 1e-14);
        assert!((trace_re(&rho.mat) + rho.trace_deficit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_mode_vacuum_and_ordering() {
        let rho = two_mode_coherent(0.0, 0.0, 1.3, 2).unwrap();
        assert_eq!(rho.dim(), 6);
        assert!((rho.mat[(0, 0)].re - 1.0).abs() < 1e-15);
        assert_eq!(rho.trace_deficit, 0.0);
        assert_eq!(
            two_mode_labels(2),
            vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        );
        assert!(matches!(
            two_mode_coherent(-0.1, 0.0, 0.0, 2),
            Err(QdtError::InvalidAmplitude(_))
        ));
    }

    #[test]
    fn two_mode_amplitudes_match_series() {
        let (a, b) = (0.316, 0.316);
        let rho = two_mode_coherent(a, b, 0.0, 2).unwrap();
        let pref = (-(a * a + b * b) / 2.0f64).exp();
        // independent evaluation of |<j,k|psi>|^2 = pref^2 a^2j b^2k / (j! k!)
        let expect = [
            pref * pref,
            pref * pref * a * a,
            pref * pref * b * b,
            pref * pref * a.powi(4) / 2.0,
            pref * pref * a * a * b * b,
            pref * pref * b.powi(4) / 2.0,
        ];
        for (i, e) in expect.iter().enumerate() {
            assert!((rho.mat[(i, i)].re - e).abs() < 1e-14);
        }
        let kept: f64 = expect.iter().sum();
        assert!((rho.trace_deficit - (1.0 - kept)).abs() < 1e-14);
    }

    #[test]
    fn two_mode_swap_symmetry() {
        let x = two_mode_coherent(0.3, 0.1, 0.0, 2).unwrap();
        let y = two_mode_coherent(0.1, 0.3, 0.0, 2).unwrap();
        // swapping modes maps |j,k> -> |k,j>
        let perm = [0, 2, 1, 5, 4, 3];
        for i in 0..6 {
            for j in 0..6 {
                assert!((x.mat[(perm[i], perm[j])] - y.mat[(i, j)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = seeded(9);
        for d in [1, 2, 5, 8] {
            let u = random_unitary(d, &mut rng).unwrap();
            assert!((u.adjoint() * &u - CMat::identity(d, d)).norm() < 1e-10);
        }
        let u = random_unitary(1, &mut rng).unwrap();
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_haar_moments() {
        // For Haar U(d): E|U_11|^2 = 1/d and E|U_11|^4 = 2/(d(d+1)).
        let mut rng = seeded(21);
        let d = 3;
        let n = 10_000;
        let (mut m2, mut m4) = (0.0, 0.0);
        for _ in 0..n {
            let u = random_unitary(d, &mut rng).unwrap();
            let p = u[(0, 0)].norm_sqr();
            m2 += p;
            m4 += p * p;
        }
        m2 /= n as f64;
        m4 /= n as f64;
        assert!((m2 - 1.0 / 3.0).abs() < 0.01, "{m2}");
        assert!((m4 - 2.0 / 12.0).abs() < 0.01, "{m4}");
    }

    #[test]
    fn probe_set_completeness_flags() {
        let basis = Arc::new(HermitianBasis::build(4, BasisOrdering::GellmannDefault).unwrap());
        let mut rng = seeded(1);
        let states: Vec<_> = (0..20).map(|_| random_pure_state(4, &mut rng).unwrap()).collect();
        let full = build_probe_set(states.clone(), basis.clone()).unwrap();
        assert!(full.informationally_complete);
        assert_eq!(full.x.nrows(), 20);
        let part = build_probe_set(states[..10].to_vec(), basis.clone()).unwrap();
        assert!(!part.informationally_complete);
        // rows equal the parameterizations
        let phi = basis.parameterize_raw(&states[3].mat).unwrap();
        assert_eq!(full.x.row(3).transpose(), phi);
    }

    #[test]
    fn probe_set_rejects_dimension_mismatch() {
        let basis = Arc::new(HermitianBasis::build(3, BasisOrdering::GellmannDefault).unwrap());
        let s = random_pure_state(4, &mut seeded(0)).unwrap();
        assert!(matches!(
            build_probe_set(vec![s], basis),
            Err(QdtError::Shape(_))
        ));
    }

    #[test]
    fn two_mode_table_is_complete_on_blocks() {
        let t = default_two_mode_table();
        assert_eq!(t.len(), 19);
        let basis = Arc::new(HermitianBasis::block_diagonal(&[1, 2, 3]).unwrap());
        let ps = build_probe_set(two_mode_probe_states(&t, 2).unwrap(), basis).unwrap();
        assert_eq!(rank(&ps.x, RANK_RTOL), 14);
        assert!(ps.informationally_complete);
    }

    #[test]
    fn coherent_probes_in_range() {
        let mut rng = seeded(5);
        let states = random_coherent_states(8, 30, &mut rng).unwrap();
        for s in &states {
            assert!(s.trace_deficit >= 0.0 && s.trace_deficit < 1.0);
            assert!(min_eigenvalue_hermitian(&s.mat) > -1e-12);
        }
    }
}
