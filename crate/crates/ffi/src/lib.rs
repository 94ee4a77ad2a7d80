//! C ABI over `ear-core`.
//!
//! Models and feature datasets are exposed as opaque handles created by a
//! `*_load` function and released with the matching `*_free`. Every other
//! function returns an [`EarStatus`]; on failure a message is available from
//! [`ear_last_error`] on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ear_core::earm::load_model;
use ear_core::encoder::{load_feature_file, FeatureDataset, TapFeatures};
use ear_core::metrics::{auroc, ScoredLabels};
use ear_core::reconfigurator::DomainModel;
use ear_core::{hdc, rng, EarError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    State = 5,
    Numeric = 6,
    Capacity = 7,
    Panic = 8,
    Other = 9,
}

/// Loaded domain model.
pub struct EarModel(DomainModel);

/// Loaded EARF feature file.
pub struct EarDataset(FeatureDataset);

/// Outcome of classifying one sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EarInference {
    pub label: u32,
    /// Hamming distance to the nearest prototype.
    pub distance: u32,
    pub ood_score: f64,
    pub is_ood: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &EarError) -> EarStatus {
    match e {
        EarError::Io(_) => EarStatus::Io,
        e if e.is_format_error() => EarStatus::Format,
        EarError::Argument(_) | EarError::Dimension { .. } | EarError::Domain(_) | EarError::Config(_) => {
            EarStatus::InvalidArgument
        }
        EarError::State(_) => EarStatus::State,
        EarError::Numeric(_) | EarError::Calibration(_) | EarError::Metric(_) => EarStatus::Numeric,
        EarError::Capacity(_) => EarStatus::Capacity,
        _ => EarStatus::Other,
    }
}

/// Runs `f`, recording any error or panic.
fn guard<F: FnOnce() -> Result<(), (EarStatus, String)>>(f: F) -> EarStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EarStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EarStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (EarStatus, String)>;
}

impl<T> OrStatus<T> for ear_core::Result<T> {
    fn or_status(self) -> Result<T, (EarStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (EarStatus, String) {
    (EarStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (EarStatus, String) {
    (EarStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` must be null or point to a valid `T` for the duration of the call.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (EarStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<String, (EarStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ear_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ear_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Hypervector dimension for `num_classes * num_adaptors` codebook rows.
///
/// # Safety
/// `out` must point to writable memory for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn ear_codebook_dimension(num_classes: usize, num_adaptors: usize, out: *mut usize) -> EarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let rows = num_classes
            .checked_mul(num_adaptors)
            .ok_or_else(|| invalid("row count overflows"))?;
        *out = hdc::codebook_dimension(rows).or_status()?;
        Ok(())
    })
}

/// Loads an EARM file. On success `*out` owns a handle to release with
/// [`ear_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_model_load(path: *const c_char, out: *mut *mut EarModel) -> EarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = load_model(path_arg(path)?).or_status()?;
        *out = Box::into_raw(Box::new(EarModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`ear_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ear_model_free(model: *mut EarModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_model_dim(model: *const EarModel, out: *mut usize) -> EarStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.0.dim();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_model_num_adaptors(model: *const EarModel, out: *mut usize) -> EarStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.0.adaptors().len();
        Ok(())
    })
}

/// Number of classes the model knows.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_model_num_classes(model: *const EarModel, out: *mut usize) -> EarStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.0.classes().len();
        Ok(())
    })
}

/// Classifies one sample given as `n_taps` float arrays, `taps[i]` holding
/// `tap_lens[i]` values. `seed` drives the stochastic binarization.
///
/// # Safety
/// `taps` and `tap_lens` must point to `n_taps` elements each and every
/// `taps[i]` to `tap_lens[i]` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_model_infer(
    model: *const EarModel,
    taps: *const *const f32,
    tap_lens: *const usize,
    n_taps: usize,
    seed: u64,
    out: *mut EarInference,
) -> EarStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if taps.is_null() || tap_lens.is_null() {
            return Err(null("taps"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let ptrs = std::slice::from_raw_parts(taps, n_taps);
        let lens = std::slice::from_raw_parts(tap_lens, n_taps);
        let mut values = Vec::with_capacity(n_taps);
        for (&p, &len) in ptrs.iter().zip(lens) {
            if p.is_null() && len > 0 {
                return Err(null("tap"));
            }
            values.push(if len == 0 {
                Vec::new()
            } else {
                std::slice::from_raw_parts(p, len).to_vec()
            });
        }
        let features = TapFeatures::new(values).or_status()?;
        let inf = m.0.infer(&features, &mut rng::seeded(seed)).or_status()?;
        *out = EarInference {
            label: inf.classification.label,
            distance: inf.classification.distance as u32,
            ood_score: inf.ood_score,
            is_ood: inf.is_ood,
        };
        Ok(())
    })
}

/// Loads an EARF feature file. Release with [`ear_dataset_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_dataset_load(path: *const c_char, out: *mut *mut EarDataset) -> EarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = load_feature_file(path_arg(path)?).or_status()?;
        *out = Box::into_raw(Box::new(EarDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from [`ear_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ear_dataset_free(ds: *mut EarDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_dataset_len(ds: *const EarDataset, out: *mut usize) -> EarStatus {
    guard(|| {
        let d = deref(ds, "dataset")?;
        *out.as_mut().ok_or_else(|| null("out"))? = d.0.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_dataset_tap_count(ds: *const EarDataset, out: *mut usize) -> EarStatus {
    guard(|| {
        let d = deref(ds, "dataset")?;
        *out.as_mut().ok_or_else(|| null("out"))? = d.0.tap_count();
        Ok(())
    })
}

/// Label of sample `index`.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_dataset_label(ds: *const EarDataset, index: usize, out: *mut u32) -> EarStatus {
    guard(|| {
        let d = deref(ds, "dataset")?;
        let label = d
            .0
            .labels()
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *out.as_mut().ok_or_else(|| null("out"))? = *label;
        Ok(())
    })
}

/// Runs the model over every sample. Writes classification accuracy to
/// `*accuracy` and, when `ood_scores` is non-null, one OOD score per sample.
///
/// # Safety
/// Handles must be live; `accuracy` must be writable; `ood_scores` must be
/// null or hold `scores_len` doubles, at least the dataset length.
#[no_mangle]
pub unsafe extern "C" fn ear_model_evaluate_dataset(
    model: *const EarModel,
    ds: *const EarDataset,
    seed: u64,
    accuracy: *mut f64,
    ood_scores: *mut f64,
    scores_len: usize,
) -> EarStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = deref(ds, "dataset")?;
        let accuracy = accuracy.as_mut().ok_or_else(|| null("accuracy"))?;
        let n = d.0.len();
        if n == 0 {
            return Err(invalid("dataset is empty"));
        }
        let scores = if ood_scores.is_null() {
            None
        } else if scores_len < n {
            return Err(invalid(format!("score buffer holds {scores_len}, need {n}")));
        } else {
            Some(std::slice::from_raw_parts_mut(ood_scores, n))
        };
        let mut r = rng::seeded(seed);
        let mut correct = 0usize;
        let mut computed = Vec::with_capacity(n);
        for (x, &label) in d.0.samples().iter().zip(d.0.labels()) {
            let inf = m.0.infer(x, &mut r).or_status()?;
            correct += (inf.classification.label == label) as usize;
            computed.push(inf.ood_score);
        }
        if let Some(s) = scores {
            s.copy_from_slice(&computed);
        }
        *accuracy = correct as f64 / n as f64;
        Ok(())
    })
}

/// Area under the ROC curve where larger `scores` should indicate
/// `positive[i] != 0`.
///
/// # Safety
/// `scores` and `positive` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ear_auroc(scores: *const f64, positive: *const u8, n: usize, out: *mut f64) -> EarStatus {
    guard(|| {
        if scores.is_null() || positive.is_null() {
            return Err(null("input"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = std::slice::from_raw_parts(scores, n).to_vec();
        let p = std::slice::from_raw_parts(positive, n).iter().map(|&b| b != 0).collect();
        *out = auroc(&ScoredLabels::new(s, p).or_status()?).or_status()?;
        Ok(())
    })
}
