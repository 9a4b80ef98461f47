//! C ABI for the temporal density model.
//!
//! Models are opaque handles created by `tdx_fit`/`tdx_fit_static` or
//! `tdx_model_from_json` and released with `tdx_model_free`. Every
//! function returns a [`TdxStatus`]; on failure a thread-local message is
//! available through `tdx_last_error_message` until the next call on the
//! same thread. The generated header lives at `include/tdx.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use tdx::{fit_static, fit_tdx, Hyperparams, SolverConfig, TdxError, TdxModel};

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdxStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments failed validation.
    InvalidArgument = 2,
    /// The fit or evaluation failed numerically.
    NumericalError = 3,
    /// A JSON document did not parse or did not match the schema.
    ParseError = 4,
    /// A string argument was not valid UTF-8.
    Utf8Error = 5,
    /// A panic was caught at the boundary.
    InternalError = 6,
}

/// Solver settings for the fitting entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TdxSolverOptions {
    /// Gradient infinity-norm stopping tolerance.
    pub optimality_tolerance: f64,
    pub max_iterations: usize,
    /// Number of multistart points; the first is always the zero matrix.
    pub n_starts: usize,
    /// Random starts draw coefficients uniformly from this bound.
    pub artificial_bound: f64,
    pub seed: u64,
}

impl From<TdxSolverOptions> for SolverConfig {
    fn from(o: TdxSolverOptions) -> Self {
        SolverConfig {
            optimality_tolerance: o.optimality_tolerance,
            max_iterations: o.max_iterations,
            n_starts: o.n_starts,
            artificial_bound: o.artificial_bound,
            seed: o.seed,
        }
    }
}

/// Opaque fitted model.
pub struct TdxModelHandle {
    model: TdxModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let cstring = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained a nul byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_for(err: &TdxError) -> TdxStatus {
    match err {
        TdxError::NumericalOverflow { .. }
        | TdxError::LineSearchFailure
        | TdxError::FitFailure { .. }
        | TdxError::SelectionFailure(_) => TdxStatus::NumericalError,
        TdxError::Schema(_) | TdxError::Json(_) => TdxStatus::ParseError,
        _ => TdxStatus::InvalidArgument,
    }
}

/// Runs `body` with panic containment and error-message capture.
fn guarded<F: FnOnce() -> Result<TdxStatus, TdxError>>(body: F) -> TdxStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => {
            let status = status_for(&err);
            set_last_error(err.to_string());
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            TdxStatus::InternalError
        }
    }
}

/// Message of the most recent failure on this thread, or null. The
/// pointer is valid until the next tdx call on the same thread.
#[no_mangle]
pub extern "C" fn tdx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |message| message.as_ptr())
    })
}

/// Default solver options: tolerance 1e-4, 500 iterations, 4 starts,
/// artificial bound 2, seed 0.
#[no_mangle]
pub extern "C" fn tdx_solver_options_default() -> TdxSolverOptions {
    let defaults = SolverConfig::default();
    TdxSolverOptions {
        optimality_tolerance: defaults.optimality_tolerance,
        max_iterations: defaults.max_iterations,
        n_starts: defaults.n_starts,
        artificial_bound: defaults.artificial_bound,
        seed: defaults.seed,
    }
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(ptr, len))
    }
}

/// Fits the drift-aware model on `n` observations.
///
/// `xs` and `ts` must point to `n` doubles; times must lie in [0, 1].
/// On success `*out_model` owns the model; release it with
/// `tdx_model_free`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tdx_fit(
    xs: *const f64,
    ts: *const f64,
    n: usize,
    m: usize,
    h: f64,
    r: usize,
    lambda: f64,
    kappa: f64,
    options: TdxSolverOptions,
    out_model: *mut *mut TdxModelHandle,
) -> TdxStatus {
    guarded(|| {
        let (Some(xs), Some(ts)) = (slice_arg(xs, n), slice_arg(ts, n)) else {
            return Ok(TdxStatus::NullArgument);
        };
        if out_model.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        let hp = Hyperparams {
            m,
            h,
            r,
            lambda,
            kappa,
        };
        let (model, _) = fit_tdx(xs, ts, &hp, &options.into(), None)?;
        *out_model = Box::into_raw(Box::new(TdxModelHandle { model }));
        Ok(TdxStatus::Ok)
    })
}

/// Fits the static variant (order 0, unweighted, unregularized).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tdx_fit_static(
    xs: *const f64,
    ts: *const f64,
    n: usize,
    m: usize,
    h: f64,
    options: TdxSolverOptions,
    out_model: *mut *mut TdxModelHandle,
) -> TdxStatus {
    guarded(|| {
        let (Some(xs), Some(ts)) = (slice_arg(xs, n), slice_arg(ts, n)) else {
            return Ok(TdxStatus::NullArgument);
        };
        if out_model.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        let hp = Hyperparams {
            m,
            h,
            r: 0,
            lambda: 0.0,
            kappa: 1.0,
        };
        let (model, _) = fit_static(xs, ts, &hp, &options.into(), None)?;
        *out_model = Box::into_raw(Box::new(TdxModelHandle { model }));
        Ok(TdxStatus::Ok)
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tdx_model_free(model: *mut TdxModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of basis functions of the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tdx_model_basis_size(
    model: *const TdxModelHandle,
    out_m: *mut usize,
) -> TdxStatus {
    guarded(|| {
        if model.is_null() || out_m.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        *out_m = (*model).model.basis().len();
        Ok(TdxStatus::Ok)
    })
}

/// Density estimate at `(x, t)`. `t` may lie outside the training window.
///
/// # Safety
/// `model` must be a live handle; `out_density` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdx_density_at(
    model: *const TdxModelHandle,
    x: f64,
    t: f64,
    out_density: *mut f64,
) -> TdxStatus {
    guarded(|| {
        if model.is_null() || out_density.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        *out_density = (*model).model.density_at(x, t)?;
        Ok(TdxStatus::Ok)
    })
}

/// Density along `grid` (length `len`) at time `t`, written to
/// `out_values` (also length `len`).
///
/// # Safety
/// Pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tdx_density_curve(
    model: *const TdxModelHandle,
    t: f64,
    grid: *const f64,
    len: usize,
    out_values: *mut f64,
) -> TdxStatus {
    guarded(|| {
        if model.is_null() || out_values.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        let Some(grid) = slice_arg(grid, len) else {
            return Ok(TdxStatus::NullArgument);
        };
        let handle = &(*model).model;
        let gamma = handle.weight_trajectory(t)?;
        for (i, &x) in grid.iter().enumerate() {
            let phi = handle.basis().eval(x)?;
            *out_values.add(i) = phi.dot(&gamma.weights());
        }
        Ok(TdxStatus::Ok)
    })
}

/// Mixture weights at time `t`, written to `out_weights` (length `len`,
/// which must equal the basis size).
///
/// # Safety
/// Pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tdx_weights_at(
    model: *const TdxModelHandle,
    t: f64,
    out_weights: *mut f64,
    len: usize,
) -> TdxStatus {
    guarded(|| {
        if model.is_null() || out_weights.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        let handle = &(*model).model;
        if len != handle.basis().len() {
            return Err(TdxError::InvalidArgument(format!(
                "weight buffer holds {len} values, model has {}",
                handle.basis().len()
            )));
        }
        let gamma = handle.weight_trajectory(t)?;
        for (i, w) in gamma.weights().iter().enumerate() {
            *out_weights.add(i) = *w;
        }
        Ok(TdxStatus::Ok)
    })
}

/// Serializes the model to its JSON document. The returned string must be
/// released with `tdx_string_free`.
///
/// # Safety
/// `model` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdx_model_to_json(
    model: *const TdxModelHandle,
    out_json: *mut *mut c_char,
) -> TdxStatus {
    guarded(|| {
        if model.is_null() || out_json.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        let json = (*model).model.to_json_string()?;
        let cstring = CString::new(json)
            .map_err(|_| TdxError::Schema("model json contained a nul byte".into()))?;
        *out_json = cstring.into_raw();
        Ok(TdxStatus::Ok)
    })
}

/// Parses a model from its JSON document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdx_model_from_json(
    json: *const c_char,
    out_model: *mut *mut TdxModelHandle,
) -> TdxStatus {
    guarded(|| {
        if json.is_null() || out_model.is_null() {
            return Ok(TdxStatus::NullArgument);
        }
        let Ok(json) = CStr::from_ptr(json).to_str() else {
            set_last_error("model json is not valid UTF-8".into());
            return Ok(TdxStatus::Utf8Error);
        };
        let model = TdxModel::from_json_str(json)?;
        *out_model = Box::into_raw(Box::new(TdxModelHandle { model }));
        Ok(TdxStatus::Ok)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tdx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
