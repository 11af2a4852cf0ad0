//! C ABI over the afnet core.
//!
//! Every function returns an [`AfnetStatus`]. On failure a message for the
//! calling thread is available from [`afnet_last_error`]. Models are opaque
//! handles created by `afnet_model_new` or `afnet_model_load` and released
//! with `afnet_model_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use afnet::arch::{ModelVariant, Segmenter, VariantTag};
use afnet::geodata::{compute_ndvi, Predictor};
use afnet::metrics::ConfusionMatrix;
use afnet::{Error, Tensor};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AfnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    Contract = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct AfnetModel {
    seg: Segmenter,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AfnetStatus {
    match e {
        Error::Io { .. } | Error::Stream { .. } => AfnetStatus::Io,
        Error::Format(_) | Error::Decode(_) | Error::Parse { .. } | Error::VariantMismatch { .. } => AfnetStatus::Format,
        Error::Geometry(_) | Error::DimensionMismatch { .. } | Error::RankMismatch { .. } => AfnetStatus::Geometry,
        Error::Config(_) | Error::Validation(_) => AfnetStatus::InvalidArgument,
        _ => AfnetStatus::Contract,
    }
}

/// Run `f`, turning errors and panics into a status plus a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), (AfnetStatus, String)>) -> AfnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AfnetStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            AfnetStatus::Panic
        }
    }
}

type Fail = (AfnetStatus, String);

fn lift<T>(r: afnet::Result<T>) -> Result<T, Fail> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err((AfnetStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AfnetStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn variant(tag: *const c_char, full_scale: bool) -> Result<ModelVariant, Fail> {
    let tag: VariantTag = lift(text(tag, "variant")?.parse())?;
    Ok(if full_scale { ModelVariant::full(tag) } else { ModelVariant::tiny(tag) })
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn afnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Build a freshly initialized model. `variant` is one of `DFN`, `mDFN`,
/// `MPVN`, `MPVN-M`, `MPVN-R`, `MPVN-RM`; `full_scale` nonzero selects the
/// ResNet-50/ResNet-18 encoders and decoder width 512 instead of the tiny ones.
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn afnet_model_new(variant_tag: *const c_char, full_scale: i32, seed: u64, out: *mut *mut AfnetModel) -> AfnetStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = variant(variant_tag, full_scale != 0)?;
        let seg = lift(Segmenter::new(&v, seed))?;
        *out = Box::into_raw(Box::new(AfnetModel { seg }));
        Ok(())
    })
}

/// Load a model from a checkpoint written by `afnet train`.
///
/// # Safety
/// String arguments must be NUL-terminated and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn afnet_model_load(
    variant_tag: *const c_char,
    full_scale: i32,
    checkpoint: *const c_char,
    out: *mut *mut AfnetModel,
) -> AfnetStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = variant(variant_tag, full_scale != 0)?;
        let path = text(checkpoint, "checkpoint")?;
        let seg = lift(Segmenter::load(&v, Path::new(path)))?;
        *out = Box::into_raw(Box::new(AfnetModel { seg }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn afnet_model_free(model: *mut AfnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn afnet_model_num_classes(model: *const AfnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.seg.model.num_classes())
}

/// Whether the model reads the auxiliary (NDVI, DSM) planes.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn afnet_model_uses_aux(model: *const AfnetModel) -> i32 {
    model.as_ref().map_or(0, |m| i32::from(m.seg.model.tag().uses_aux()))
}

/// Class probabilities of one normalized tile. `optical` holds 3 planes of
/// `height * width` values, `aux` 2 planes (NDVI, DSM) and may be null for
/// single-path variants. `probs` receives `num_classes` planes. Both sides
/// must be multiples of 32.
///
/// # Safety
/// Buffers must hold the stated number of `float`s.
#[no_mangle]
pub unsafe extern "C" fn afnet_model_predict(
    model: *const AfnetModel,
    optical: *const f32,
    aux: *const f32,
    width: usize,
    height: usize,
    probs: *mut f32,
) -> AfnetStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(optical, "optical")?;
        non_null(probs, "probs")?;
        let m = &(*model).seg;
        let plane = width
            .checked_mul(height)
            .filter(|&p| p > 0)
            .ok_or((AfnetStatus::Geometry, format!("invalid extent {width}x{height}")))?;
        let o = std::slice::from_raw_parts(optical, 3 * plane);
        let o = lift(Tensor::new([1, 3, height, width], o.to_vec()))?;
        let a = if m.model.tag().uses_aux() {
            non_null(aux, "aux")?;
            let a = std::slice::from_raw_parts(aux, 2 * plane);
            Some(lift(Tensor::new([1, 2, height, width], a.to_vec()))?)
        } else {
            None
        };
        let p = lift(m.predict_probs(&o, a.as_ref()))?;
        std::slice::from_raw_parts_mut(probs, p.numel()).copy_from_slice(p.data());
        Ok(())
    })
}

/// `(nir - red) / (nir + red)` per element, clamped to [-1, 1]; 0 where both are 0.
///
/// # Safety
/// All three buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn afnet_ndvi(nir: *const f32, red: *const f32, len: usize, out: *mut f32) -> AfnetStatus {
    guard(|| {
        non_null(nir, "nir")?;
        non_null(red, "red")?;
        non_null(out, "out")?;
        let v = lift(compute_ndvi(
            std::slice::from_raw_parts(nir, len),
            std::slice::from_raw_parts(red, len),
        ))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&v);
        Ok(())
    })
}

/// Confusion counts of `len` predicted and ground-truth labels into
/// `counts[gt * k + pred]`, followed by overall accuracy and per-class F1.
/// Ground-truth values of 255 are skipped. `f1` may be null.
///
/// # Safety
/// `pred` and `gt` must hold `len` bytes, `counts` `k * k` values, `f1` `k`.
#[no_mangle]
pub unsafe extern "C" fn afnet_confusion(
    pred: *const u8,
    gt: *const u8,
    len: usize,
    k: usize,
    counts: *mut u64,
    overall_accuracy: *mut f64,
    f1: *mut f64,
) -> AfnetStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(gt, "gt")?;
        non_null(counts, "counts")?;
        non_null(overall_accuracy, "overall_accuracy")?;
        if k == 0 || k > 255 {
            return Err((AfnetStatus::InvalidArgument, format!("class count {k} outside 1..=255")));
        }
        let p = std::slice::from_raw_parts(pred, len);
        let g = std::slice::from_raw_parts(gt, len);
        let skip: Vec<bool> = g.iter().map(|&v| v == afnet::geodata::IGNORE_LABEL).collect();
        let cm = lift(ConfusionMatrix::from_maps(p, g, k, Some(&skip)))?;
        std::slice::from_raw_parts_mut(counts, k * k).copy_from_slice(cm.counts());
        *overall_accuracy = lift(cm.overall_accuracy())?;
        if !f1.is_null() {
            let f = std::slice::from_raw_parts_mut(f1, k);
            for (c, v) in f.iter_mut().enumerate() {
                *v = cm.class_prf(c).f1;
            }
        }
        Ok(())
    })
}
