//! C interface. Every function returns a [`ClcStatus`]; on failure the
//! message is available from [`clc_last_error`] on the same thread.
//! Datasets and models are opaque heap handles released by their `_free`
//! functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;


use clc_core::checkpoint::load_checkpoint;
use clc_core::cleaner::select_clean;
use clc_core::datasets::{load_features, FeatureSequence};
use clc_core::evaluation::{average_precision, evaluate, median_filter};
use clc_core::experiment::mean_ap;
use clc_core::ClcError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    /// Average precision is undefined without positive labels.
    NoPositives = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Loaded feature file.
pub struct ClcDataset {
    videos: Vec<FeatureSequence>,
}

/// Loaded checkpoint.
pub struct ClcModelHandle {
    model: clc_core::ClcModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &ClcError) -> ClcStatus {
    match err {
        ClcError::Io(_) => ClcStatus::Io,
        ClcError::Format { .. } | ClcError::Parse { .. } => ClcStatus::Format,
        ClcError::Shape { .. } => ClcStatus::Shape,
        ClcError::NonFinite { .. } | ClcError::Training { .. } => ClcStatus::Numeric,
        _ => ClcStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ClcStatus, String)>) -> ClcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClcStatus::Panic
        }
    }
}

fn fail(err: ClcError) -> (ClcStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (ClcStatus, String) {
    (ClcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (ClcStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ClcStatus::InvalidArgument, "path is not UTF-8".to_owned()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (ClcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (ClcStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn clc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clc_dataset_load(path: *const c_char, out: *mut *mut ClcDataset) -> ClcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let videos = load_features(path_arg(path)?).map_err(fail)?;
        *out = Box::into_raw(Box::new(ClcDataset { videos }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from `clc_dataset_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clc_dataset_free(dataset: *mut ClcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn clc_dataset_len(dataset: *const ClcDataset, out: *mut usize) -> ClcStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = d.videos.len();
        Ok(())
    })
}

/// Number of shots of video `index`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn clc_dataset_shots(dataset: *const ClcDataset, index: usize, out: *mut usize) -> ClcStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let v = d
            .videos
            .get(index)
            .ok_or_else(|| (ClcStatus::InvalidArgument, format!("no video {index}")))?;
        *out = v.len();
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clc_model_load(path: *const c_char, out: *mut *mut ClcModelHandle) -> ClcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, _) = load_checkpoint(path_arg(path)?).map_err(fail)?;
        *out = Box::into_raw(Box::new(ClcModelHandle { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `clc_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clc_model_free(model: *mut ClcModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Highlight-class scores of video `index`, written to `out[0..out_len]`;
/// `out_len` must equal the video's shot count.
///
/// # Safety
/// Pointers must be valid; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn clc_model_predict(
    model: *const ClcModelHandle,
    dataset: *const ClcDataset,
    index: usize,
    window: usize,
    out: *mut f64,
    out_len: usize,
) -> ClcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let v = d
            .videos
            .get(index)
            .ok_or_else(|| (ClcStatus::InvalidArgument, format!("no video {index}")))?;
        if out_len != v.len() {
            return Err((
                ClcStatus::BufferTooSmall,
                format!("buffer holds {out_len}, video has {} shots", v.len()),
            ));
        }
        let out = slice_mut_arg(out, out_len, "out")?;
        let curve = m.model.predict_curve(&v.visual, &v.audio, window).map_err(fail)?;
        out.copy_from_slice(&curve);
        Ok(())
    })
}

/// Mean AP over the labelled videos of `dataset` with median half-width `k`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn clc_evaluate(
    model: *const ClcModelHandle,
    dataset: *const ClcDataset,
    k: usize,
    window: usize,
    out_map: *mut f64,
) -> ClcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out_map.as_mut().ok_or_else(|| null("out_map"))?;
        let results = evaluate(&m.model, &d.videos, k, window).map_err(fail)?;
        *out = mean_ap(&results).ok_or((ClcStatus::NoPositives, "no video has positives".to_owned()))?;
        Ok(())
    })
}

/// # Safety
/// `y` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn clc_median_filter(y: *const f64, len: usize, k: usize, out: *mut f64) -> ClcStatus {
    guard(|| {
        let y = slice_arg(y, len, "y")?;
        let out = slice_mut_arg(out, len, "out")?;
        out.copy_from_slice(&median_filter(y, k));
        Ok(())
    })
}

/// # Safety
/// `scores` and `labels` must each hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn clc_average_precision(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out_ap: *mut f64,
) -> ClcStatus {
    guard(|| {
        let scores = slice_arg(scores, len, "scores")?;
        let labels = slice_arg(labels, len, "labels")?;
        let out = out_ap.as_mut().ok_or_else(|| null("out_ap"))?;
        if labels.iter().any(|&g| g > 1) {
            return Err((ClcStatus::InvalidArgument, "labels must be 0 or 1".into()));
        }
        match average_precision(scores, labels).map_err(fail)? {
            Some(ap) => {
                *out = ap;
                Ok(())
            }
            None => Err((ClcStatus::NoPositives, "no positive labels".into())),
        }
    })
}

/// Indices of the `ceil(tau * len)` smallest losses in ascending order.
/// `out_indices` must hold `len` entries; the count is written to
/// `out_count`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn clc_select_clean(
    losses: *const f64,
    len: usize,
    tau: f64,
    out_indices: *mut usize,
    out_count: *mut usize,
) -> ClcStatus {
    guard(|| {
        let losses = slice_arg(losses, len, "losses")?;
        let out = slice_mut_arg(out_indices, len, "out_indices")?;
        let count = out_count.as_mut().ok_or_else(|| null("out_count"))?;
        let picked = select_clean(losses, tau).map_err(fail)?;
        out[..picked.len()].copy_from_slice(&picked);
        *count = picked.len();
        Ok(())
    })
}

