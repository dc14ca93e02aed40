//! C interface.
//!
//! Objects cross the boundary as opaque handles created by `qdt_*_new`-style
//! constructors and released with the matching `qdt_*_free`. Every fallible
//! call returns a [`QdtStatus`]; on failure `qdt_last_error()` describes it.
//! Panics are caught and reported as `QDT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use qdt::basis::{BasisOrdering, HermitianBasis};
use qdt::config::ExperimentConfig;
use qdt::detector::{example_detector_by_name, Povm};
use qdt::kernels::KernelSpec;
use qdt::measurement::{born_probabilities, sample_counts, MeasurementRecord};
use qdt::rng::{stage, stream};
use qdt::scaling::{allocate, estimate_and_score, EstimatorSpec, TrialEstimate, Weighting};
use qdt::states::{build_probe_set, haar_probe_states, ProbeSet};
use qdt::QdtError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    OutOfRange = 3,
    InvalidDimension = 10,
    UnsupportedOrdering = 11,
    SymmetryViolation = 12,
    Shape = 13,
    NotFound = 14,
    InvalidAmplitude = 15,
    InvalidDistribution = 16,
    InvalidRecord = 17,
    NotIdentifiable = 18,
    InvalidKernel = 19,
    MissingContext = 20,
    InvalidConfig = 21,
    NotComputable = 22,
    NotApplicable = 23,
    ConvergenceFailure = 24,
    Io = 30,
    Parse = 31,
    Panic = 99,
}

impl From<&QdtError> for QdtStatus {
    fn from(e: &QdtError) -> Self {
        match e {
            QdtError::InvalidDimension(_) => QdtStatus::InvalidDimension,
            QdtError::UnsupportedOrdering(_) => QdtStatus::UnsupportedOrdering,
            QdtError::SymmetryViolation(_) => QdtStatus::SymmetryViolation,
            QdtError::Shape(_) => QdtStatus::Shape,
            QdtError::NotFound(_) => QdtStatus::NotFound,
            QdtError::InvalidAmplitude(_) => QdtStatus::InvalidAmplitude,
            QdtError::InvalidDistribution(_) => QdtStatus::InvalidDistribution,
            QdtError::InvalidRecord(_) => QdtStatus::InvalidRecord,
            QdtError::NotIdentifiable(_) => QdtStatus::NotIdentifiable,
            QdtError::InvalidKernel(_) => QdtStatus::InvalidKernel,
            QdtError::MissingContext(_) => QdtStatus::MissingContext,
            QdtError::InvalidConfig(_) => QdtStatus::InvalidConfig,
            QdtError::NotComputable(_) => QdtStatus::NotComputable,
            QdtError::NotApplicable(_) => QdtStatus::NotApplicable,
            QdtError::ConvergenceFailure { .. } => QdtStatus::ConvergenceFailure,
            QdtError::Io(_) => QdtStatus::Io,
            QdtError::Json(_) | QdtError::Csv(_) => QdtStatus::Parse,
        }
    }
}

/// Opaque detector (POVM).
pub struct QdtDetector(Povm);
/// Opaque probe set with its basis.
pub struct QdtProbes(ProbeSet);
/// Opaque count record.
pub struct QdtRecord(MeasurementRecord);
/// Opaque estimate: raw coefficients plus the corrected detector.
pub struct QdtEstimate(TrialEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

enum Fail {
    Status(QdtStatus, String),
    Qdt(QdtError),
}

impl From<QdtError> for Fail {
    fn from(e: QdtError) -> Self {
        Fail::Qdt(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QdtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QdtStatus::Ok,
        Ok(Err(Fail::Qdt(e))) => {
            set_error(e.to_string());
            QdtStatus::from(&e)
        }
        Ok(Err(Fail::Status(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            QdtStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(QdtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(QdtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn qdt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in detector by name: `paper_d4`, `paper_d8(seed)`, `group_I`, `group_II`.
///
/// # Safety
/// `name` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdt_detector_example(name: *const c_char, seed: u64, out: *mut *mut QdtDetector) -> QdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let name = str_arg(name, "name")?;
        let det = example_detector_by_name(name, seed)?;
        *out = Box::into_raw(Box::new(QdtDetector(det)));
        Ok(())
    })
}

/// Detector from a JSON file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdt_detector_load(path: *const c_char, out: *mut *mut QdtDetector) -> QdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = str_arg(path, "path")?;
        *out = Box::into_raw(Box::new(QdtDetector(Povm::load(Path::new(path))?)));
        Ok(())
    })
}

/// # Safety
/// `det` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdt_detector_free(det: *mut QdtDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Hilbert-space dimension and number of outcomes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_detector_shape(det: *const QdtDetector, dim: *mut usize, outcomes: *mut usize) -> QdtStatus {
    guard(|| {
        let d = borrow(det, "detector")?;
        *out_ptr(dim, "dim")? = d.0.dim();
        *out_ptr(outcomes, "outcomes")? = d.0.n();
        Ok(())
    })
}

/// Copies element `index` row-major into `re` and `im`, each holding
/// `len >= dim * dim` doubles.
///
/// # Safety
/// `re` and `im` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qdt_detector_element(
    det: *const QdtDetector,
    index: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> QdtStatus {
    guard(|| {
        let d = borrow(det, "detector")?;
        if re.is_null() || im.is_null() {
            return Err(null("output buffer"));
        }
        let e = d.0.elements().get(index).ok_or_else(|| {
            Fail::Status(QdtStatus::OutOfRange, format!("element {index} of {}", d.0.n()))
        })?;
        let dim = d.0.dim();
        if len < dim * dim {
            return Err(Fail::Status(
                QdtStatus::OutOfRange,
                format!("buffer holds {len}, need {}", dim * dim),
            ));
        }
        let re = std::slice::from_raw_parts_mut(re, len);
        let im = std::slice::from_raw_parts_mut(im, len);
        for r in 0..dim {
            for c in 0..dim {
                re[r * dim + c] = e[(r, c)].re;
                im[r * dim + c] = e[(r, c)].im;
            }
        }
        Ok(())
    })
}

/// `count` Haar-random pure probes of dimension `dim` in the Gell-Mann basis.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdt_probes_haar(dim: usize, count: usize, seed: u64, out: *mut *mut QdtProbes) -> QdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let basis = Arc::new(HermitianBasis::build(dim, BasisOrdering::GellmannDefault)?);
        let states = haar_probe_states(dim, count, &mut stream(seed, 0, stage::PROBES))?;
        *out = Box::into_raw(Box::new(QdtProbes(build_probe_set(states, basis)?)));
        Ok(())
    })
}

/// Number of probes and whether they are informationally complete.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_probes_info(probes: *const QdtProbes, count: *mut usize, complete: *mut bool) -> QdtStatus {
    guard(|| {
        let p = borrow(probes, "probes")?;
        *out_ptr(count, "count")? = p.0.len();
        *out_ptr(complete, "complete")? = p.0.informationally_complete;
        Ok(())
    })
}

/// # Safety
/// `probes` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdt_probes_free(probes: *mut QdtProbes) {
    if !probes.is_null() {
        drop(Box::from_raw(probes));
    }
}

/// Samples counts for `total_shots` spread uniformly over the probes. The
/// draw is fixed by `(seed, trial)`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_simulate(
    det: *const QdtDetector,
    probes: *const QdtProbes,
    total_shots: u64,
    seed: u64,
    trial: u64,
    out: *mut *mut QdtRecord,
) -> QdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let d = borrow(det, "detector")?;
        let p = borrow(probes, "probes")?;
        let probs = born_probabilities(&d.0, &p.0)?;
        let shots = allocate(None, p.0.len(), total_shots)?;
        let rec = sample_counts(&probs, &shots, &mut stream(seed, trial, stage::SAMPLING))?;
        *out = Box::into_raw(Box::new(QdtRecord(rec)));
        Ok(())
    })
}

/// Count for outcome `i`, probe `j`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_record_count(rec: *const QdtRecord, i: usize, j: usize, out: *mut u64) -> QdtStatus {
    guard(|| {
        let r = borrow(rec, "record")?;
        if i >= r.0.n() || j >= r.0.m() {
            return Err(Fail::Status(QdtStatus::OutOfRange, format!("cell ({i}, {j})")));
        }
        *out_ptr(out, "out")? = r.0.count(i, j);
        Ok(())
    })
}

/// # Safety
/// `rec` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdt_record_free(rec: *mut QdtRecord) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Regression weighting for [`qdt_estimate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdtWeighting {
    Empirical = 0,
    Oracle = 1,
    Uniform = 2,
}

/// Estimates and corrects a detector. `kernel_json` is a kernel object such
/// as `{"kind":"di","c":0.1,"mu":0.9}`; null means no regularization.
/// `truth` supplies oracle quantities and the score.
///
/// # Safety
/// All non-optional pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_estimate(
    probes: *const QdtProbes,
    rec: *const QdtRecord,
    truth: *const QdtDetector,
    kernel_json: *const c_char,
    weighting: QdtWeighting,
    out: *mut *mut QdtEstimate,
) -> QdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = borrow(probes, "probes")?;
        let r = borrow(rec, "record")?;
        let t = borrow(truth, "truth")?;
        let kernel = if kernel_json.is_null() {
            KernelSpec::None
        } else {
            serde_json::from_str(str_arg(kernel_json, "kernel_json")?).map_err(QdtError::from)?
        };
        let w = match weighting {
            QdtWeighting::Empirical => Weighting::Empirical,
            QdtWeighting::Oracle => Weighting::Oracle,
            QdtWeighting::Uniform => Weighting::Uniform,
        };
        let te = estimate_and_score(&p.0, &r.0, &t.0, &EstimatorSpec::new(kernel, w))?;
        *out = Box::into_raw(Box::new(QdtEstimate(te)));
        Ok(())
    })
}

/// `sum_i |P_hat_i - P_i|_F^2` of the corrected estimate.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_estimate_mse(est: *const QdtEstimate, out: *mut f64) -> QdtStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(est, "estimate")?.0.mse;
        Ok(())
    })
}

/// New detector handle holding the corrected estimate.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qdt_estimate_detector(est: *const QdtEstimate, out: *mut *mut QdtDetector) -> QdtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let e = borrow(est, "estimate")?;
        *out = Box::into_raw(Box::new(QdtDetector(e.0.correction.corrected.clone())));
        Ok(())
    })
}

/// # Safety
/// `est` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdt_estimate_free(est: *mut QdtEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Runs the full pipeline for a JSON config file, writing into `out_dir`.
///
/// # Safety
/// Both strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn qdt_run_config(config_path: *const c_char, out_dir: *const c_char) -> QdtStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(Path::new(str_arg(config_path, "config_path")?))?;
        qdt::pipeline::run_pipeline(cfg, Path::new(str_arg(out_dir, "out_dir")?))?;
        Ok(())
    })
}
