//! C interface to `onsager`.
//!
//! Every function returns an [`OnsagerStatus`]; on failure the message is
//! available from [`onsager_last_error`] on the same thread. Kernels are opaque
//! handles created by `onsager_kernel_*` constructors and released with
//! [`onsager_kernel_free`]. Strings returned by the library are released with
//! [`onsager_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use onsager::bifurcation::{critical_values, uniqueness_thresholds};
use onsager::kernel::{khat_eval, KernelSource, KernelSpec};
use onsager::polybasis::{harmonic_count, legendre_eval, Deriv};
use onsager::solver::{AxisymState, Method, SolveOptions, ZonalModel};
use onsager::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnsagerStatus {
    Ok = 0,
    /// A null pointer, bad length or out-of-range parameter.
    InvalidArgument = 1,
    /// The caller's buffer is too short; the required length is reported.
    BufferTooSmall = 2,
    /// Loss of accuracy, overflow, singular Jacobian or similar.
    Numerical = 3,
    /// The solver stopped before reaching the tolerance.
    NotConverged = 4,
    /// An internal panic was caught.
    Internal = 5,
}

/// Source of the kernel coefficients for [`onsager_kernel_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnsagerKernelSource {
    Quadrature = 0,
    Recurrence = 1,
}

/// Iteration used by [`onsager_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnsagerMethod {
    Newton = 0,
    Picard = 1,
}

/// Opaque kernel handle.
pub struct OnsagerKernel {
    spec: KernelSpec,
}

/// Uniqueness thresholds of a kernel.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OnsagerThresholds {
    pub lambda_tilde0: f64,
    pub lambda_0_lower: f64,
    pub lambda_0_upper: f64,
    pub lambda_contraction: f64,
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub sup_norm_khat: f64,
}

/// Summary of one solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OnsagerSolveInfo {
    pub residual_norm: f64,
    pub sup_norm_u: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sign det(I - J)`, or 0 when it was not determined.
    pub index: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> OnsagerStatus {
    match err {
        Error::InvalidArgument(_) | Error::Domain { .. } | Error::Validation { .. } | Error::Resolution { .. } => {
            OnsagerStatus::InvalidArgument
        }
        _ => OnsagerStatus::Numerical,
    }
}

enum Failure {
    Core(Error),
    Status(OnsagerStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn invalid(msg: &str) -> Failure {
    Failure::Status(OnsagerStatus::InvalidArgument, msg.to_string())
}

/// Runs `body`, records any error or panic, and returns the status.
fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> OnsagerStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => OnsagerStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".to_string());
            OnsagerStatus::Internal
        }
    }
}

unsafe fn kernel_ref<'a>(k: *const OnsagerKernel) -> Result<&'a KernelSpec, Failure> {
    k.as_ref().map(|k| &k.spec).ok_or_else(|| invalid("null kernel handle"))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid("null output pointer"))
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> Result<(), Failure> {
    if let Some(w) = written.as_mut() {
        *w = values.len();
    }
    if len < values.len() {
        return Err(Failure::Status(
            OnsagerStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    if buf.is_null() {
        return Err(invalid("null buffer"));
    }
    slice::from_raw_parts_mut(buf, values.len()).copy_from_slice(values);
    Ok(())
}

fn into_handle(spec: KernelSpec, out: &mut *mut OnsagerKernel) {
    *out = Box::into_raw(Box::new(OnsagerKernel { spec }));
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn onsager_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Dimension of the degree-`n` spherical harmonics on `S^{dim-1}`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn onsager_harmonic_count(dim: u32, n: u32, out: *mut u64) -> OnsagerStatus {
    guard(|| {
        *out_ref(out)? = harmonic_count(dim, n)?;
        Ok(())
    })
}

/// Normalized Legendre polynomial `P_n(dim, t)` with `P_n(1) = 1`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn onsager_legendre_eval(dim: u32, n: u32, t: f64, out: *mut f64) -> OnsagerStatus {
    guard(|| {
        *out_ref(out)? = legendre_eval(dim, n, t, Deriv::Value)?;
        Ok(())
    })
}

/// Builds the Onsager kernel with modes `1..=n_max`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_new(
    dim: u32,
    n_max: usize,
    source: OnsagerKernelSource,
    out: *mut *mut OnsagerKernel,
) -> OnsagerStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let source = match source {
            OnsagerKernelSource::Quadrature => KernelSource::OnsagerQuadrature,
            OnsagerKernelSource::Recurrence => KernelSource::OnsagerRecurrence,
        };
        into_handle(KernelSpec::onsager(dim, n_max, source)?, out);
        Ok(())
    })
}

/// Builds a kernel from coefficients `k_1..k_len` and mean `k0`.
///
/// # Safety
/// `coeffs` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_custom(
    dim: u32,
    k0: f64,
    coeffs: *const f64,
    len: usize,
    out: *mut *mut OnsagerKernel,
) -> OnsagerStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        if coeffs.is_null() || len == 0 {
            return Err(invalid("custom kernel needs at least one coefficient"));
        }
        let values = slice::from_raw_parts(coeffs, len).to_vec();
        into_handle(KernelSpec::custom(dim, values)?.with_mean(k0)?, out);
        Ok(())
    })
}

/// Loads a kernel from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_from_json(json: *const c_char, out: *mut *mut OnsagerKernel) -> OnsagerStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(invalid("null string"));
        }
        let text = std::ffi::CStr::from_ptr(json)
            .to_str()
            .map_err(|_| invalid("kernel JSON is not UTF-8"))?;
        into_handle(KernelSpec::from_json(text)?, out);
        Ok(())
    })
}

/// Releases a kernel; null is ignored.
///
/// # Safety
/// `kernel` must come from an `onsager_kernel_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_free(kernel: *mut OnsagerKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Number of modes of the kernel, or 0 for a null handle.
///
/// # Safety
/// `kernel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_n_max(kernel: *const OnsagerKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.spec.n_max())
}

/// Copies `k_1..k_N` into `buf`; `written` (optional) receives `N`.
///
/// # Safety
/// `kernel` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_coeffs(
    kernel: *const OnsagerKernel,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> OnsagerStatus {
    guard(|| copy_out(kernel_ref(kernel)?.coeffs(), buf, len, written))
}

/// Evaluates `K̂(γ) = -Σ k_n P_{2n}(cos γ)`.
///
/// # Safety
/// `kernel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_khat(kernel: *const OnsagerKernel, gamma: f64, out: *mut f64) -> OnsagerStatus {
    guard(|| {
        let spec = kernel_ref(kernel)?;
        *out_ref(out)? = khat_eval(spec, gamma)?;
        Ok(())
    })
}

/// JSON form of the kernel; release with [`onsager_string_free`].
///
/// # Safety
/// `kernel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn onsager_kernel_to_json(kernel: *const OnsagerKernel, out: *mut *mut c_char) -> OnsagerStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let text = kernel_ref(kernel)?.to_json()?;
        *out = CString::new(text).map_err(|_| invalid("JSON contains nul"))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn onsager_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Critical concentrations `λ_n = N(D,2n)/k_n`, `n = 1..N`.
///
/// # Safety
/// `kernel` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn onsager_critical_values(
    kernel: *const OnsagerKernel,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> OnsagerStatus {
    guard(|| copy_out(&critical_values(kernel_ref(kernel)?)?, buf, len, written))
}

/// Uniqueness thresholds of the kernel.
///
/// # Safety
/// `kernel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn onsager_thresholds(
    kernel: *const OnsagerKernel,
    out: *mut OnsagerThresholds,
) -> OnsagerStatus {
    guard(|| {
        let t = uniqueness_thresholds(kernel_ref(kernel)?)?;
        *out_ref(out)? = OnsagerThresholds {
            lambda_tilde0: t.lambda_tilde0,
            lambda_0_lower: t.lambda_0[0],
            lambda_0_upper: t.lambda_0[1],
            lambda_contraction: t.lambda_contraction,
            partial_sum: t.partial_sum,
            tail_bound: t.tail_bound,
            sup_norm_khat: t.sup_norm_khat,
        };
        Ok(())
    })
}

/// Solves `u = λ G(u)` from the initial coefficients `coeffs[0..n]`
/// (`n = N`, or 0 for the zero start) and overwrites them with the result.
/// Returns `NotConverged` (with `info` filled) when the tolerance is missed.
///
/// # Safety
/// `kernel` must be a live handle; `coeffs` must hold `n` values; `info` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn onsager_solve(
    kernel: *const OnsagerKernel,
    lambda: f64,
    method: OnsagerMethod,
    tol: f64,
    max_iter: usize,
    coeffs: *mut f64,
    n: usize,
    info: *mut OnsagerSolveInfo,
) -> OnsagerStatus {
    guard(|| {
        let spec = kernel_ref(kernel)?;
        let info = out_ref(info)?;
        let modes = spec.n_max();
        if coeffs.is_null() || n != modes {
            return Err(invalid("coefficient buffer must hold exactly N values"));
        }
        let buf = slice::from_raw_parts_mut(coeffs, n);
        let init = AxisymState::new(spec.dim(), buf.to_vec())?;
        let opts = SolveOptions {
            method: match method {
                OnsagerMethod::Newton => Method::Newton,
                OnsagerMethod::Picard => Method::Picard,
            },
            tol,
            max_iter,
            ..SolveOptions::default()
        };
        let report = ZonalModel::new(spec)?.solve(lambda, &init, &opts)?;
        buf.copy_from_slice(&report.modes);
        *info = OnsagerSolveInfo {
            residual_norm: report.residual_norm,
            sup_norm_u: report.sup_norm_u,
            iterations: report.iterations,
            converged: report.converged,
            index: report.index.map_or(0, i32::from),
        };
        if report.converged {
            Ok(())
        } else {
            Err(Failure::Status(
                OnsagerStatus::NotConverged,
                format!(
                    "residual {:e} after {} iterations",
                    report.residual_norm, report.iterations
                ),
            ))
        }
    })
}
