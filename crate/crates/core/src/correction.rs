//! Projection of raw estimates onto physical detectors.
//!
//! Steps: symmetrize, clip negative eigenvalues, hand the completeness
//! defect `I - sum P_i` out in proportion to the element traces, clip once
//! more, then congruence-normalize by `S^{-1/2}` with `S = sum P_i` so the
//! elements sum to the identity exactly.

use serde::Serialize;

use crate::detector::{Povm, BLOCK_TOL};
use crate::error::{shape_err, QdtError, Result};
use crate::linalg::{c, hermitian_deviation, hermitian_eigen, hermitian_map, hermitian_part, trace_re, CMat};

/// Inputs further than this from Hermitian are rejected.
pub const INPUT_HERMITIAN_TOL: f64 = 1e-8;
/// An input this close to a valid POVM is returned untouched.
pub const SKIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CorrectionResult {
    pub corrected: Povm,
    /// `sum_i |P_hat_i - E_hat_i|_F`.
    pub distance: f64,
    /// Total magnitude of the negative eigenvalues removed by clipping.
    pub clipped_mass: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionSummary {
    pub distance: f64,
    pub clipped_mass: f64,
    pub skipped: bool,
}

impl CorrectionResult {
    pub fn summary(&self) -> CorrectionSummary {
        CorrectionSummary {
            distance: self.distance,
            clipped_mass: self.clipped_mass,
            skipped: self.skipped,
        }
    }
}

fn check_inputs(raw: &[CMat]) -> Result<usize> {
    let Some(first) = raw.first() else {
        return Err(shape_err("nothing to correct"));
    };
    let d = first.nrows();
    for e in raw {
        if e.nrows() != d || e.ncols() != d {
            return Err(shape_err("raw elements differ in size"));
        }
        let dev = hermitian_deviation(e);
        if dev > INPUT_HERMITIAN_TOL * e.norm().max(1.0) {
            return Err(QdtError::SymmetryViolation(dev));
        }
    }
    Ok(d)
}

fn clip(m: &CMat) -> (CMat, f64) {
    let (vals, _) = hermitian_eigen(m);
    let neg: f64 = vals.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    if neg == 0.0 {
        return (m.clone(), 0.0);
    }
    (hermitian_part(&hermitian_map(m, |v| v.max(0.0))), neg)
}

fn is_valid(elems: &[CMat], tol: f64) -> bool {
    let d = elems[0].nrows();
    let mut sum = CMat::zeros(d, d);
    for e in elems {
        if crate::linalg::min_eigenvalue_hermitian(e) < -tol {
            return false;
        }
        sum += e;
    }
    (sum - CMat::identity(d, d)).norm() <= tol
}

/// Core routine on bare matrices; returns corrected elements and clipped mass.
fn correct_elements(raw: &[CMat]) -> (Vec<CMat>, f64, bool) {
    let d = raw[0].nrows();
    let n = raw.len();
    let sym: Vec<CMat> = raw.iter().map(hermitian_part).collect();
    if is_valid(&sym, SKIP_TOL) {
        return (raw.to_vec(), 0.0, true);
    }

    let mut clipped_mass = 0.0;
    let mut elems: Vec<CMat> = sym
        .iter()
        .map(|e| {
            let (p, m) = clip(e);
            clipped_mass += m;
            p
        })
        .collect();

    let mut sum = CMat::zeros(d, d);
    for e in &elems {
        sum += e;
    }
    let delta = CMat::identity(d, d) - sum;
    let traces: Vec<f64> = elems.iter().map(trace_re).collect();
    let total: f64 = traces.iter().sum();
    for (e, t) in elems.iter_mut().zip(&traces) {
        let share = if total > 1e-14 { t / total } else { 1.0 / n as f64 };
        *e += &delta * c(share, 0.0);
    }
    for e in elems.iter_mut() {
        let (p, m) = clip(e);
        clipped_mass += m;
        *e = p;
    }

    // S >= I after the second clip, so S^{-1/2} is well defined.
    let mut s = CMat::zeros(d, d);
    for e in &elems {
        s += e;
    }
    let s_inv_half = hermitian_map(&s, |v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    let elems = elems
        .iter()
        .map(|e| hermitian_part(&(&s_inv_half * e * &s_inv_half)))
        .collect();
    (elems, clipped_mass, false)
}

fn distance(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum()
}

/// Nearest-physical repair of raw estimates `E_hat_i`.
pub fn correct_to_povm(raw: &[CMat]) -> Result<CorrectionResult> {
    check_inputs(raw)?;
    let (elems, clipped_mass, skipped) = correct_elements(raw);
    let dist = if skipped { 0.0 } else { distance(&elems, raw) };
    let corrected = if skipped {
        Povm::new_unchecked(elems, None)?
    } else {
        Povm::new(elems, None)?
    };
    Ok(CorrectionResult {
        corrected,
        distance: dist,
        clipped_mass,
        skipped,
    })
}

/// Off-block entries are dropped and each diagonal block is repaired on its own.
pub fn correct_blockwise(raw: &[CMat], blocks: &[usize]) -> Result<CorrectionResult> {
    let d = check_inputs(raw)?;
    if blocks.is_empty() || blocks.contains(&0) || blocks.iter().sum::<usize>() != d {
        return Err(shape_err(format!(
            "block sizes {blocks:?} do not sum to dimension {d}"
        )));
    }
    let n = raw.len();
    let mut out = vec![CMat::zeros(d, d); n];
    let mut clipped_mass = 0.0;
    let mut all_skipped = true;
    let mut off = 0;
    for &b in blocks {
        let sub: Vec<CMat> = raw
            .iter()
            .map(|e| e.view((off, off), (b, b)).into_owned())
            .collect();
        let (fixed, m, skipped) = correct_elements(&sub);
        clipped_mass += m;
        all_skipped &= skipped;
        for (o, f) in out.iter_mut().zip(&fixed) {
            o.view_mut((off, off), (b, b)).copy_from(f);
        }
        off += b;
    }
    let off_block = crate::detector::max_off_block(raw, blocks);
    let skipped = all_skipped && off_block <= BLOCK_TOL;
    if skipped {
        return Ok(CorrectionResult {
            corrected: Povm::new_unchecked(raw.to_vec(), Some(blocks.to_vec()))?,
            distance: 0.0,
            clipped_mass: 0.0,
            skipped: true,
        });
    }
    let dist = distance(&out, raw);
    Ok(CorrectionResult {
        corrected: Povm::new(out, Some(blocks.to_vec()))?,
        distance: dist,
        clipped_mass,
        skipped: false,
    })
}
