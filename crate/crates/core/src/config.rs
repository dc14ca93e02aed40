//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "detector": "paper_d4",
//!   "probes": { "class": "haar", "count": 20 },
//!   "shots": { "total": 1000000, "allocation": "uniform" },
//!   "estimator": "rwls",
//!   "kernel": { "kind": "di", "c": 0.1, "mu": 0.9 },
//!   "trials": 10,
//!   "seed": 42,
//!   "output": "out"
//! }
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisOrdering, HermitianBasis};
use crate::detector::{example_detector_by_name, Povm};
use crate::error::{QdtError, Result};
use crate::kernels::{kernel_grid, KernelSpec};
use crate::linalg::{c, CMat};
use crate::rng::{stage, stream};
use crate::scaling::{EstimatorSpec, Weighting};
use crate::states::{
    build_probe_set, default_two_mode_table, haar_probe_states, random_coherent_states, two_mode_probe_states,
    DensityMatrix, ProbeSet, TwoModeProbe,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectorSource {
    Name(String),
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    GellmannDefault,
    PauliTensor,
    Block(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ProbeSpec {
    /// Haar-random pure states. Dimension defaults to the detector's.
    Haar {
        count: usize,
        #[serde(default)]
        dimension: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Coherent states with `Re, Im alpha` uniform in `[-1, 1]`.
    Coherent {
        count: usize,
        #[serde(default)]
        dimension: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Two-mode coherent states; the built-in 19-state table by default.
    TwoMode {
        #[serde(default = "default_max_photons")]
        max_photons: usize,
        #[serde(default)]
        table: Option<Vec<TwoModeProbe>>,
    },
    File {
        path: PathBuf,
    },
}

fn default_max_photons() -> usize {
    2
}

/// Probe file: row-major `[re, im]` density matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeFile {
    pub dim: usize,
    pub states: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub trace_deficits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    Uniform,
    Optimized,
    /// Fractions, one per probe.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotsSpec {
    pub total: u64,
    #[serde(default = "default_allocation")]
    pub allocation: Allocation,
}

fn default_allocation() -> Allocation {
    Allocation::Uniform
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ls,
    Awls,
    Rwls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub kind: String,
    pub c: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub mu1: Vec<f64>,
    /// Probes in the estimation part; the rest validate.
    pub n_estimation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub detector: DetectorSource,
    #[serde(default)]
    pub basis: Option<BasisChoice>,
    pub probes: ProbeSpec,
    pub shots: ShotsSpec,
    #[serde(default = "default_method")]
    pub estimator: Method,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    /// Estimators compared in a scaling study; defaults to `estimator` + `kernel`.
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorSpec>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, rename = "N_grid")]
    pub n_grid: Option<Vec<u64>>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub cond_limit: Option<f64>,
    #[serde(default)]
    pub cross_validation: Option<CvSpec>,
}

fn default_method() -> Method {
    Method::Rwls
}
fn default_kernel() -> KernelSpec {
    KernelSpec::None
}
fn default_trials() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    /// Reads a config; relative file references are resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QdtError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let DetectorSource::File { file } = &mut self.detector {
            fix(file);
        }
        if let ProbeSpec::File { path } = &mut self.probes {
            fix(path);
        }
    }

    /// Structural checks that need no heavy computation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QdtError::InvalidConfig(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let DetectorSource::File { file } = &self.detector {
            if !file.exists() {
                return bad(format!("detector file {} does not exist", file.display()));
            }
        }
        match &self.probes {
            ProbeSpec::File { path } if !path.exists() => {
                return bad(format!("probe file {} does not exist", path.display()));
            }
            ProbeSpec::Haar { count: 0, .. } | ProbeSpec::Coherent { count: 0, .. } => {
                return bad("probe count must be positive".into());
            }
            _ => {}
        }
        if let Some(l) = self.cond_limit {
            if !(l > 1.0 && l.is_finite()) {
                return bad(format!("cond_limit must be finite and > 1, got {l}"));
            }
        }
        self.kernel.validate()?;
        if self.estimator == Method::Awls && self.kernel != KernelSpec::None {
            return bad("awls takes no kernel; use rwls".into());
        }
        for e in self.estimators.iter().flatten() {
            e.kernel.validate()?;
        }
        if let Some(grid) = &self.n_grid {
            if grid.is_empty() {
                return bad("N_grid must not be empty".into());
            }
        }
        if let Allocation::Explicit(f) = &self.shots.allocation {
            let sum: f64 = f.iter().sum();
            if f.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return bad("explicit allocation must be non-negative fractions summing to 1".into());
            }
        }
        if let Some(cv) = &self.cross_validation {
            kernel_grid(&cv.kind, &cv.c, &cv.mu, &cv.mu1)?;
        }
        Ok(())
    }

    /// Estimator implied by `estimator` and `kernel`.
    pub fn primary_estimator(&self) -> EstimatorSpec {
        let weighting = match self.estimator {
            Method::Ls => Weighting::Uniform,
            Method::Awls | Method::Rwls => Weighting::Empirical,
        };
        EstimatorSpec::new(self.kernel.clone(), weighting)
    }

    pub fn study_estimators(&self) -> Vec<EstimatorSpec> {
        self.estimators
            .clone()
            .unwrap_or_else(|| vec![self.primary_estimator()])
    }

    pub fn load_detector(&self) -> Result<Povm> {
        match &self.detector {
            DetectorSource::Name(n) => example_detector_by_name(n, self.seed),
            DetectorSource::File { file } => Povm::load(file),
        }
    }

    /// Builds the basis and probe set for `detector`.
    pub fn build_probes(&self, detector: &Povm) -> Result<ProbeSet> {
        let d = detector.dim();
        let basis = match &self.basis {
            Some(BasisChoice::GellmannDefault) => HermitianBasis::build(d, BasisOrdering::GellmannDefault)?,
            Some(BasisChoice::PauliTensor) => HermitianBasis::build(d, BasisOrdering::PauliTensor)?,
            Some(BasisChoice::Block(sizes)) => HermitianBasis::block_diagonal(sizes)?,
            None => match detector.block_structure() {
                Some(sizes) => HermitianBasis::block_diagonal(sizes)?,
                None => HermitianBasis::build(d, BasisOrdering::GellmannDefault)?,
            },
        };
        let basis = Arc::new(basis);
        let check_dim = |dim: Option<usize>| -> Result<usize> {
            match dim {
                Some(x) if x != d => Err(QdtError::InvalidConfig(format!(
                    "probe dimension {x} differs from detector dimension {d}"
                ))),
                _ => Ok(d),
            }
        };
        let states = match &self.probes {
            ProbeSpec::Haar { count, dimension, seed } => {
                let dim = check_dim(*dimension)?;
                let mut rng = stream(seed.unwrap_or(self.seed), 0, stage::PROBES);
                haar_probe_states(dim, *count, &mut rng)?
            }
            ProbeSpec::Coherent { count, dimension, seed } => {
                let dim = check_dim(*dimension)?;
                let mut rng = stream(seed.unwrap_or(self.seed), 0, stage::PROBES);
                random_coherent_states(dim, *count, &mut rng)?
            }
            ProbeSpec::TwoMode { max_photons, table } => {
                let table = table.clone().unwrap_or_else(default_two_mode_table);
                two_mode_probe_states(&table, *max_photons)?
            }
            ProbeSpec::File { path } => load_probe_file(path)?,
        };
        build_probe_set(states, basis)
    }
}

pub fn load_probe_file(path: &Path) -> Result<Vec<DensityMatrix>> {
    let pf: ProbeFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let d = pf.dim;
    pf.states
        .iter()
        .enumerate()
        .map(|(j, s)| {
            if s.len() != d * d {
                return Err(QdtError::InvalidConfig(format!(
                    "probe {j} has {} entries, expected {}",
                    s.len(),
                    d * d
                )));
            }
            let mat = CMat::from_row_iterator(d, d, s.iter().map(|z| c(z[0], z[1])));
            let mut rho = DensityMatrix::from_matrix(mat);
            if let Some(t) = pf.trace_deficits.as_ref().and_then(|t| t.get(j)) {
                rho.trace_deficit = *t;
            }
            Ok(rho)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "schema_version": 1,
        "detector": "paper_d4",
        "probes": { "class": "haar", "count": 20 },
        "shots": { "total": 1000000 },
        "kernel": { "kind": "di", "c": 0.1, "mu": 0.9 },
        "trials": 10,
        "N_grid": [10000, 100000],
        "seed": 42
    }"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.shots.allocation, Allocation::Uniform);
        assert_eq!(cfg.estimator, Method::Rwls);
        assert_eq!(cfg.n_grid, Some(vec![10_000, 100_000]));
        let det = cfg.load_detector().unwrap();
        let probes = cfg.build_probes(&det).unwrap();
        assert_eq!(probes.len(), 20);
        assert!(probes.informationally_complete);
        // same seed, same probes
        let again = cfg.build_probes(&det).unwrap();
        assert_eq!(probes.x, again.x);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        cfg.trials = 0;
        assert!(matches!(cfg.validate(), Err(QdtError::InvalidConfig(_))));
        let mut cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        cfg.schema_version = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        cfg.detector = DetectorSource::File {
            file: "/nonexistent/povm.json".into(),
        };
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"schema_version\": 1}").is_err());
    }

    #[test]
    fn group_detector_gets_block_basis() {
        let cfg = ExperimentConfig::from_json(
            r#"{"schema_version":1,"detector":"group_I","probes":{"class":"two_mode"},"shots":{"total":19000000}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let det = cfg.load_detector().unwrap();
        let probes = cfg.build_probes(&det).unwrap();
        assert_eq!(probes.basis.len(), 14);
        assert_eq!(probes.len(), 19);
    }

    #[test]
    fn allocation_forms() {
        let a: Allocation = serde_json::from_str("\"optimized\"").unwrap();
        assert_eq!(a, Allocation::Optimized);
        let e: Allocation = serde_json::from_str("{\"explicit\":[0.5,0.5]}").unwrap();
        assert_eq!(e, Allocation::Explicit(vec![0.5, 0.5]));
    }
}
