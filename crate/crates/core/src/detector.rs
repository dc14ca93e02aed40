//! Detector models (POVMs) and the built-in example detectors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{CoeffKind, CoeffVector, HermitianBasis};
use crate::error::{shape_err, QdtError, Result};
use crate::linalg::{block_diag, c, hermitian_deviation, min_eigenvalue_hermitian, CMat, RVec};
use crate::rng::{stage, stream};
use crate::states::random_unitary;

/// Tolerance for PSD and completeness checks on a detector.
pub const POVM_TOL: f64 = 1e-10;
/// Off-block entries above this break a declared block structure.
pub const BLOCK_TOL: f64 = 1e-12;

/// A detector: `n` PSD elements summing to the identity.
#[derive(Debug, Clone)]
pub struct Povm {
    elements: Vec<CMat>,
    block_structure: Option<Vec<usize>>,
}

impl Povm {
    /// Validated constructor.
    pub fn new(elements: Vec<CMat>, block_structure: Option<Vec<usize>>) -> Result<Self> {
        let p = Self::new_unchecked(elements, block_structure)?;
        p.validate()?;
        Ok(p)
    }

    /// Shape checks only; PSD and completeness are not enforced.
    pub fn new_unchecked(elements: Vec<CMat>, block_structure: Option<Vec<usize>>) -> Result<Self> {
        let Some(first) = elements.first() else {
            return Err(shape_err("a POVM needs at least one element"));
        };
        let d = first.nrows();
        for (i, e) in elements.iter().enumerate() {
            if e.nrows() != d || e.ncols() != d {
                return Err(shape_err(format!(
                    "element {i} is {}x{}, expected {d}x{d}",
                    e.nrows(),
                    e.ncols()
                )));
            }
        }
        if let Some(bs) = &block_structure {
            if bs.contains(&0) || bs.iter().sum::<usize>() != d {
                return Err(shape_err(format!(
                    "block sizes {bs:?} do not sum to dimension {d}"
                )));
            }
        }
        Ok(Self {
            elements,
            block_structure,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.elements.iter().enumerate() {
            let dev = hermitian_deviation(e);
            if dev > POVM_TOL {
                return Err(QdtError::SymmetryViolation(dev));
            }
            let m = min_eigenvalue_hermitian(e);
            if m < -POVM_TOL {
                return Err(QdtError::InvalidDistribution(format!(
                    "element {i} has eigenvalue {m:.3e}"
                )));
            }
        }
        let res = self.completeness_residual();
        if res > POVM_TOL {
            return Err(QdtError::InvalidDistribution(format!(
                "elements sum to identity only within {res:.3e}"
            )));
        }
        if let Some(bs) = &self.block_structure {
            let off = max_off_block(&self.elements, bs);
            if off > BLOCK_TOL {
                return Err(shape_err(format!(
                    "off-block entry {off:.3e} violates block structure {bs:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn n(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[CMat] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<CMat> {
        self.elements
    }

    pub fn block_structure(&self) -> Option<&[usize]> {
        self.block_structure.as_deref()
    }

    /// Frobenius norm of `sum_i P_i - I`.
    pub fn completeness_residual(&self) -> f64 {
        let d = self.dim();
        let mut sum = CMat::zeros(d, d);
        for e in &self.elements {
            sum += e;
        }
        (sum - CMat::identity(d, d)).norm()
    }

    pub fn lambdas(&self, basis: &HermitianBasis) -> Result<Vec<RVec>> {
        self.elements
            .iter()
            .map(|e| basis.parameterize_raw(e))
            .collect()
    }

    pub fn thetas(&self, basis: &HermitianBasis) -> Result<Vec<RVec>> {
        let n = self.n();
        self.lambdas(basis)?
            .into_iter()
            .map(|l| {
                basis
                    .theta_from_lambda(&CoeffVector::new(l, CoeffKind::Lambda), n)
                    .map(|t| t.values)
            })
            .collect()
    }

    pub fn to_json(&self) -> PovmJson {
        PovmJson {
            dim: self.dim(),
            elements: self
                .elements
                .iter()
                .map(|e| {
                    let d = e.nrows();
                    (0..d * d).map(|k| [e[(k / d, k % d)].re, e[(k / d, k % d)].im]).collect()
                })
                .collect(),
            block_structure: self.block_structure.clone(),
        }
    }

    pub fn from_json(j: &PovmJson) -> Result<Self> {
        let d = j.dim;
        let elements = j
            .elements
            .iter()
            .enumerate()
            .map(|(i, flat)| {
                if flat.len() != d * d {
                    return Err(shape_err(format!(
                        "element {i} has {} entries, expected {}",
                        flat.len(),
                        d * d
                    )));
                }
                Ok(CMat::from_fn(d, d, |r, col| {
                    let [re, im] = flat[r * d + col];
                    c(re, im)
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(elements, j.block_structure.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let j: PovmJson = serde_json::from_str(&text)?;
        Self::from_json(&j)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

/// On-disk detector format. Each element is a row-major list of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PovmJson {
    pub dim: usize,
    pub elements: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_structure: Option<Vec<usize>>,
}

/// Largest modulus of an entry outside the diagonal blocks.
pub fn max_off_block(elements: &[CMat], sizes: &[usize]) -> f64 {
    let mut owner = Vec::new();
    for (b, &s) in sizes.iter().enumerate() {
        owner.extend(std::iter::repeat_n(b, s));
    }
    let mut worst: f64 = 0.0;
    for e in elements {
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                if owner.get(i) != owner.get(j) {
                    worst = worst.max(e[(i, j)].norm());
                }
            }
        }
    }
    worst
}

/// Names accepted by [`example_detector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleDetector {
    PaperD4,
    PaperD8 { seed: u64 },
    GroupI,
    GroupII,
}

impl ExampleDetector {
    /// Parses `paper_d4`, `paper_d8`, `paper_d8(<seed>)`, `group_I`, `group_II`.
    pub fn parse(name: &str, default_seed: u64) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        match lower.as_str() {
            "paper_d4" => Ok(Self::PaperD4),
            "paper_d8" => Ok(Self::PaperD8 { seed: default_seed }),
            "group_i" => Ok(Self::GroupI),
            "group_ii" => Ok(Self::GroupII),
            s if s.starts_with("paper_d8(") && s.ends_with(')') => {
                let inner = &s["paper_d8(".len()..s.len() - 1];
                inner
                    .trim()
                    .parse()
                    .map(|seed| Self::PaperD8 { seed })
                    .map_err(|_| QdtError::NotFound(format!("detector '{name}'")))
            }
            _ => Err(QdtError::NotFound(format!("detector '{name}'"))),
        }
    }
}

pub fn example_detector(which: ExampleDetector) -> Result<Povm> {
    match which {
        ExampleDetector::PaperD4 => d4(),
        ExampleDetector::PaperD8 { seed } => d8(seed),
        ExampleDetector::GroupI => group(&GROUP_I),
        ExampleDetector::GroupII => group(&GROUP_II),
    }
}

pub fn example_detector_by_name(name: &str, default_seed: u64) -> Result<Povm> {
    example_detector(ExampleDetector::parse(name, default_seed)?)
}

fn complement(parts: &[CMat]) -> CMat {
    let d = parts[0].nrows();
    let mut rest = CMat::identity(d, d);
    for p in parts {
        rest -= p;
    }
    rest
}

fn d4_parts() -> (CMat, CMat) {
    let z = c(0.0, 0.0);
    let r = |x: f64| c(x, 0.0);
    #[rustfmt::skip]
    let p1 = CMat::from_row_slice(4, 4, &[
        r(0.1), z, c(0.002, -0.005), c(0.003, 0.007),
        z, r(0.2), z, z,
        c(0.002, 0.005), z, r(0.3), z,
        c(0.003, -0.007), z, z, r(0.4),
    ]);
    #[rustfmt::skip]
    let p2 = CMat::from_row_slice(4, 4, &[
        r(0.2), c(0.001, 0.002), z, z,
        c(0.001, -0.002), r(0.2), z, z,
        z, z, r(0.3), z,
        z, z, z, r(0.4),
    ]);
    (p1, p2)
}

fn d4() -> Result<Povm> {
    let (p1, p2) = d4_parts();
    let p3 = complement(&[p1.clone(), p2.clone()]);
    Povm::new(vec![p1, p2, p3], None)
}

const D8_MAX_DRAWS: u64 = 10_000;

fn d8(seed: u64) -> Result<Povm> {
    let (p1, p2) = d4_parts();
    let b1 = block_diag(&[p1.clone(), p1]);
    let b2 = block_diag(&[p2.clone(), p2]);
    for attempt in 0..D8_MAX_DRAWS {
        let mut rng = stream(seed, attempt, stage::DETECTOR);
        let u1 = random_unitary(8, &mut rng)?;
        let u2 = random_unitary(8, &mut rng)?;
        let e1 = crate::linalg::hermitian_part(&(&u1 * &b1 * u1.adjoint()));
        let e2 = crate::linalg::hermitian_part(&(&u2 * &b2 * u2.adjoint()));
        let e3 = complement(&[e1.clone(), e2.clone()]);
        if min_eigenvalue_hermitian(&e3) >= -POVM_TOL {
            return Povm::new(vec![e1, e2, e3], None);
        }
    }
    Err(QdtError::NotComputable(format!(
        "no PSD completion found in {D8_MAX_DRAWS} unitary draws"
    )))
}

/// Published blocks of the binary two-mode detectors: `L_1` (1x1), `L_2`
/// (2x2), `L_3` (3x3), row-major `(re, im)`.
struct GroupBlocks {
    l1: f64,
    l2: [(f64, f64); 4],
    l3: [(f64, f64); 9],
}

const GROUP_I: GroupBlocks = GroupBlocks {
    l1: 2.91e-4,
    l2: [(0.202, 0.0), (0.0, 0.00109), (0.0, -0.00109), (0.202, 0.0)],
    l3: [
        (0.363, 0.0),
        (0.0, 0.00123),
        (1.20e-6, 0.0),
        (0.0, -0.00123),
        (0.363, 0.0),
        (0.0, 0.00123),
        (1.20e-6, 0.0),
        (0.0, -0.00123),
        (0.363, 0.0),
    ],
};

const GROUP_II: GroupBlocks = GroupBlocks {
    l1: 1.27e-4,
    l2: [(0.0763, 0.0), (-0.0440, 0.0879), (-0.0440, -0.0879), (0.127, 0.0)],
    l3: [
        (0.147, 0.0),
        (-0.0574, 0.115),
        (0.00580, 0.00773),
        (-0.0574, -0.115),
        (0.184, 0.0),
        (-0.0543, 0.109),
        (0.00580, -0.00773),
        (-0.0543, -0.109),
        (0.238, 0.0),
    ],
};

/// Block sizes of the two-mode detectors (photon-number sectors 0, 1, 2).
pub const GROUP_BLOCKS: [usize; 3] = [1, 2, 3];

fn group(g: &GroupBlocks) -> Result<Povm> {
    let mk = |n: usize, v: &[(f64, f64)]| CMat::from_fn(n, n, |i, j| c(v[i * n + j].0, v[i * n + j].1));
    let p1 = block_diag(&[
        CMat::from_element(1, 1, c(g.l1, 0.0)),
        mk(2, &g.l2),
        mk(3, &g.l3),
    ]);
    let p0 = complement(std::slice::from_ref(&p1));
    Povm::new(vec![p1, p0], Some(GROUP_BLOCKS.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisOrdering, HermitianBasis};

    #[test]
    fn d4_published_entries() {
        let p = example_detector(ExampleDetector::PaperD4).unwrap();
        let e = &p.elements()[0];
        for (k, v) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
            assert_eq!(e[(k, k)], c(*v, 0.0));
        }
        assert_eq!(e[(0, 2)], c(0.002, -0.005));
        assert_eq!(p.n(), 3);
        assert!(p.completeness_residual() < 1e-14);
    }

    #[test]
    fn group_i_published_block() {
        let p = example_detector(ExampleDetector::GroupI).unwrap();
        let e = &p.elements()[0];
        assert_eq!(e[(1, 1)], c(0.202, 0.0));
        assert_eq!(e[(1, 2)], c(0.0, 0.00109));
        assert_eq!(e[(2, 1)], c(0.0, -0.00109));
        assert_eq!(e[(0, 0)], c(2.91e-4, 0.0));
        assert_eq!(p.block_structure(), Some(&[1, 2, 3][..]));
    }

    #[test]
    fn every_example_is_valid() {
        for name in ["paper_d4", "paper_d8", "paper_d8(17)", "group_I", "group_II"] {
            let p = example_detector_by_name(name, 5).unwrap();
            assert!(p.completeness_residual() < 1e-10, "{name}");
            for e in p.elements() {
                assert!(min_eigenvalue_hermitian(e) > -1e-10, "{name}");
            }
        }
    }

    #[test]
    fn d8_is_seeded() {
        let a = example_detector(ExampleDetector::PaperD8 { seed: 3 }).unwrap();
        let b = example_detector(ExampleDetector::PaperD8 { seed: 3 }).unwrap();
        let other = example_detector(ExampleDetector::PaperD8 { seed: 4 }).unwrap();
        assert_eq!(a.elements()[0], b.elements()[0]);
        assert_ne!(a.elements()[0], other.elements()[0]);
        // spectrum of P_1 is the doubled spectrum of the 4-dim element
        let (p1, _) = d4_parts();
        let mut want: Vec<f64> = crate::linalg::hermitian_eigen(&p1).0.iter().flat_map(|&x| [x, x]).collect();
        want.sort_by(f64::total_cmp);
        let got = crate::linalg::hermitian_eigen(&a.elements()[0]).0;
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_name_is_not_found() {
        assert!(matches!(
            example_detector_by_name("paper_d5", 0),
            Err(QdtError::NotFound(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let p = example_detector(ExampleDetector::GroupII).unwrap();
        let j = p.to_json();
        let text = serde_json::to_string(&j).unwrap();
        let back = Povm::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        for (a, b) in p.elements().iter().zip(back.elements()) {
            assert_eq!(a, b);
        }
        assert_eq!(back.block_structure(), p.block_structure());
    }

    #[test]
    fn rejects_non_psd_and_incomplete() {
        let half = CMat::identity(2, 2) * c(0.5, 0.0);
        assert!(Povm::new(vec![half.clone()], None).is_err());
        let neg = CMat::from_row_slice(2, 2, &[c(1.2, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        let rest = CMat::identity(2, 2) - &neg;
        assert!(Povm::new(vec![neg, rest], None).is_err());
    }

    #[test]
    fn thetas_shift_by_identity_share() {
        let p = example_detector(ExampleDetector::PaperD4).unwrap();
        let basis = HermitianBasis::build(4, BasisOrdering::PauliTensor).unwrap();
        let th = p.thetas(&basis).unwrap();
        let mut sum = RVec::zeros(16);
        for t in &th {
            sum += t;
        }
        // thetas of a complete POVM sum to zero
        assert!(sum.norm() < 1e-12);
    }
}
