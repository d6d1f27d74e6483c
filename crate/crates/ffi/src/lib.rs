//! C ABI for the obtree inference engine.
//!
//! Models are opaque `ObtModel` handles created by `obt_model_load` or
//! `obt_model_generate` and released with `obt_model_free`. Every fallible
//! call returns an `ObtStatus`; on failure `obt_last_error_message` gives a
//! description that stays valid until the next failing call on the same
//! thread. Panics are caught at the boundary and reported as
//! `OBT_STATUS_PANIC`.
//!
//! A handle may be shared between threads for concurrent `obt_predict`
//! calls. Freeing it while another call is in flight is undefined.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use obtree::{Backend, Ensemble, Error, OutputTransform, PredictOptions, SyntheticModelParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObtStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Io = 3,
    Parse = 4,
    InvalidModel = 5,
    DimensionMismatch = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct ObtModel {
    ensemble: Ensemble,
}

/// `lanes` is 0 for the scalar backend or one of 4, 8, 16, 32.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObtPredictOptions {
    pub lanes: u32,
    pub workers: u32,
    pub block_size: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
}

fn fail(status: ObtStatus, message: impl Into<String>) -> ObtStatus {
    set_error(message);
    status
}

fn status_of(err: &Error) -> ObtStatus {
    match err {
        Error::Model(_) => ObtStatus::InvalidModel,
        Error::Io { .. } => ObtStatus::Io,
        Error::Parse { .. } | Error::Csv { .. } => ObtStatus::Parse,
        Error::DimensionMismatch(_) => ObtStatus::DimensionMismatch,
        _ => ObtStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), ObtStatus>) -> ObtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ObtStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(ObtStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core<T>(r: obtree::Result<T>) -> Result<T, ObtStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), ObtStatus> {
    if p.is_null() {
        Err(fail(ObtStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, ObtStatus> {
    non_null(path, "path")?;
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(ObtStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn model_ref<'a>(model: *const ObtModel) -> Result<&'a Ensemble, ObtStatus> {
    non_null(model, "model")?;
    Ok(&(*model).ensemble)
}

unsafe fn publish(ensemble: Ensemble, out: *mut *mut ObtModel) {
    *out = Box::into_raw(Box::new(ObtModel { ensemble }));
}

fn backend_of(lanes: u32) -> Result<Backend, ObtStatus> {
    Backend::from_lane_count(lanes as usize).map_err(|e| fail(ObtStatus::InvalidArgument, e.to_string()))
}

/// Defaults: scalar backend, one worker, block size 128.
#[no_mangle]
pub extern "C" fn obt_predict_options_default() -> ObtPredictOptions {
    ObtPredictOptions {
        lanes: 0,
        workers: 1,
        block_size: obtree::DEFAULT_BLOCK_SIZE as u32,
    }
}

/// Loads a JSON model. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn obt_model_load(path: *const c_char, out: *mut *mut ObtModel) -> ObtStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let ensemble = core(obtree::load_model(&path))?;
        publish(ensemble, out);
        Ok(())
    })
}

/// Builds a seeded synthetic model. On success `*out` receives a new handle.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn obt_model_generate(
    seed: u64,
    n_features: usize,
    n_trees: usize,
    depth: usize,
    n_dims: usize,
    borders_per_feature: usize,
    out: *mut *mut ObtModel,
) -> ObtStatus {
    guard(|| {
        non_null(out, "out")?;
        let ensemble = core(obtree::gen_synthetic_model(&SyntheticModelParams {
            seed,
            n_features,
            n_trees,
            depth,
            n_dims,
            borders_per_feature,
        }))?;
        publish(ensemble, out);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn obt_model_save(model: *const ObtModel, path: *const c_char) -> ObtStatus {
    guard(|| {
        let ensemble = model_ref(model)?;
        let path = path_arg(path)?;
        core(obtree::save_model(ensemble, &path))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn obt_model_free(model: *mut ObtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature columns the model expects per sample; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn obt_model_n_features(model: *const ObtModel) -> usize {
    model.as_ref().map_or(0, |m| m.ensemble.n_features())
}

/// Outputs per sample; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn obt_model_n_dims(model: *const ObtModel) -> usize {
    model.as_ref().map_or(0, |m| m.ensemble.n_dims())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn obt_model_n_trees(model: *const ObtModel) -> usize {
    model.as_ref().map_or(0, |m| m.ensemble.trees().len())
}

/// Raw scores for `n_samples` sample-major rows of `n_features` floats.
/// Writes `n_samples * n_dims` doubles to `out`, which holds `out_len`.
/// A null `options` means the defaults.
///
/// # Safety
/// `values` must hold `n_samples * n_features` floats and `out` must have
/// room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn obt_predict(
    model: *const ObtModel,
    values: *const f32,
    n_samples: usize,
    options: *const ObtPredictOptions,
    out: *mut f64,
    out_len: usize,
) -> ObtStatus {
    guard(|| {
        let ensemble = model_ref(model)?;
        let opts = options.as_ref().copied().unwrap_or_else(|| obt_predict_options_default());
        let needed = n_samples * ensemble.n_dims();
        if out_len < needed {
            return Err(fail(
                ObtStatus::BufferTooSmall,
                format!("output needs {needed} doubles, buffer holds {out_len}"),
            ));
        }
        if n_samples == 0 {
            return Ok(());
        }
        non_null(values, "values")?;
        non_null(out, "out")?;
        let samples = std::slice::from_raw_parts(values, n_samples * ensemble.n_features());
        let options = PredictOptions {
            backend: backend_of(opts.lanes)?,
            workers: opts.workers as usize,
            block_size: opts.block_size as usize,
            transform: OutputTransform::RawValue,
            profile: false,
        };
        let result = core(obtree::predict_batch(ensemble, samples, &options))?;
        std::slice::from_raw_parts_mut(out, needed).copy_from_slice(result.predictions.raw());
        Ok(())
    })
}

/// Squared Euclidean distance of two `len`-float vectors.
///
/// # Safety
/// `a` and `b` must hold `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obt_l2_sqr(a: *const f32, b: *const f32, len: usize, lanes: u32, out: *mut f32) -> ObtStatus {
    guard(|| {
        non_null(out, "out")?;
        let backend = backend_of(lanes)?;
        let (a, b) = if len == 0 {
            (&[][..], &[][..])
        } else {
            non_null(a, "a")?;
            non_null(b, "b")?;
            (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len))
        };
        *out = core(obtree::l2_sqr_distance(a, b, backend))?;
        Ok(())
    })
}

/// The calling thread's most recent error, or null if none occurred.
#[no_mangle]
pub extern "C" fn obt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn obt_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
