//! C interface to `nds-core`.
//!
//! Every function returns an [`NdsStatus`]. On failure a message is kept per
//! thread and can be read with [`nds_last_error_message`]. Systems are opaque
//! handles created by [`nds_system_parse`] and released with
//! [`nds_system_free`]; strings returned by the library are released with
//! [`nds_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nds_core::bounds::{self, BoundCurve, BoundError, LGainDisturbance};
use nds_core::contraction::ContractionError;
use nds_core::dynsys::{CompiledSystem, Metric, VectorField};
use nds_core::expr::parse_system;
use nds_core::spreduce::{self, Block, GainConstants, ReduceError, ReduceOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    NotContracting = 4,
    Numerical = 5,
    SmallGainViolated = 6,
    InvalidArgument = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NdsBlock {
    Full = 0,
    Fast = 1,
    Slow = 2,
}

/// Compiled system handle.
pub struct NdsSystem {
    inner: CompiledSystem,
}

/// Contraction result. When certification fails with
/// `NotContracting`, `worst_lambda` holds the offending eigenvalue and
/// `beta` its negation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdsCertificate {
    pub beta: f64,
    pub chi: f64,
    pub worst_lambda: f64,
    pub samples: usize,
}

/// `amplitude · exp(-rate t) + asymptote`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdsBoundCurve {
    pub amplitude: f64,
    pub rate: f64,
    pub asymptote: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdsGainConstants {
    pub d_f: f64,
    pub alpha_fx: f64,
    pub alpha_fy: f64,
    pub d_g: f64,
    pub alpha_gx: f64,
    pub chi_f: f64,
    pub beta_f: f64,
    pub chi_g: f64,
    pub beta_g: f64,
    pub m_bar: f64,
    pub delta_offset: f64,
}

impl From<&NdsGainConstants> for GainConstants {
    fn from(g: &NdsGainConstants) -> Self {
        GainConstants {
            d_f: g.d_f,
            alpha_fx: g.alpha_fx,
            alpha_fy: g.alpha_fy,
            d_g: g.d_g,
            alpha_gx: g.alpha_gx,
            chi_f: g.chi_f,
            beta_f: g.beta_f,
            chi_g: g.chi_g,
            beta_g: g.beta_g,
            m_bar: g.m_bar,
            delta_offset: g.delta_offset,
        }
    }
}

impl From<BoundCurve> for NdsBoundCurve {
    fn from(c: BoundCurve) -> Self {
        NdsBoundCurve {
            amplitude: c.amplitude,
            rate: c.rate,
            asymptote: c.asymptote,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NdsStatus, String);

impl From<ContractionError> for Failure {
    fn from(e: ContractionError) -> Self {
        let status = match e {
            ContractionError::NotContracting(_) => NdsStatus::NotContracting,
            ContractionError::Dimension(_) | ContractionError::Metric(_) => NdsStatus::InvalidArgument,
            ContractionError::Eval { .. } => NdsStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<ReduceError> for Failure {
    fn from(e: ReduceError) -> Self {
        match e {
            ReduceError::Contraction(c) => c.into(),
            ReduceError::AboveCritical { .. } => Failure(NdsStatus::SmallGainViolated, e.to_string()),
            ReduceError::Partition { .. } | ReduceError::Dimension(_) | ReduceError::Invalid(_) => {
                Failure(NdsStatus::InvalidArgument, e.to_string())
            }
            _ => Failure(NdsStatus::Numerical, e.to_string()),
        }
    }
}

impl From<BoundError> for Failure {
    fn from(e: BoundError) -> Self {
        let status = match e {
            BoundError::SmallGainViolated { .. } => NdsStatus::SmallGainViolated,
            BoundError::Invalid(_) => NdsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NdsStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NdsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NdsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            NdsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NdsStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn system<'a>(sys: *const NdsSystem) -> Result<&'a CompiledSystem, Failure> {
    sys.as_ref().map(|s| &s.inner).ok_or_else(|| null("sys"))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn state_arg<'a>(sys: &CompiledSystem, x: *const f64, n: usize) -> Result<&'a [f64], Failure> {
    if x.is_null() {
        return Err(null("x"));
    }
    if n != sys.dim() {
        return Err(Failure(
            NdsStatus::InvalidArgument,
            format!("state has {n} entries, system has {}", sys.dim()),
        ));
    }
    Ok(std::slice::from_raw_parts(x, n))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn nds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse and compile system source text.
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nds_system_parse(src: *const c_char, out: *mut *mut NdsSystem) -> NdsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let src = str_arg(src, "src")?;
        let spec = parse_system(src).map_err(|e| Failure(NdsStatus::Parse, e.to_string()))?;
        let inner = CompiledSystem::new(&spec).map_err(|e| Failure(NdsStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(NdsSystem { inner }));
        Ok(())
    })
}

/// Release a handle from [`nds_system_parse`]. Null is ignored.
///
/// # Safety
/// `sys` must come from [`nds_system_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nds_system_free(sys: *mut NdsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State counts. Any output pointer may be null.
///
/// # Safety
/// `sys` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn nds_system_dim(
    sys: *const NdsSystem,
    n_states: *mut usize,
    n_fast: *mut usize,
    n_slow: *mut usize,
) -> NdsStatus {
    guard(|| {
        let s = system(sys)?;
        for (p, v) in [(n_states, s.dim()), (n_fast, s.n_fast()), (n_slow, s.n_slow())] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Set the perturbation parameter.
///
/// # Safety
/// `sys` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nds_system_set_epsilon(sys: *mut NdsSystem, epsilon: f64) -> NdsStatus {
    guard(|| {
        let s = sys.as_mut().ok_or_else(|| null("sys"))?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Failure(NdsStatus::InvalidArgument, format!("epsilon = {epsilon}")));
        }
        s.inner = s.inner.with_epsilon(epsilon);
        Ok(())
    })
}

/// `out = F(x, t)`; `x` and `out` hold `n` entries.
///
/// # Safety
/// `x` and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nds_system_eval(
    sys: *const NdsSystem,
    x: *const f64,
    n: usize,
    t: f64,
    out: *mut f64,
) -> NdsStatus {
    guard(|| {
        let s = system(sys)?;
        let x = state_arg(s, x, n)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, n);
        s.eval(x, t, out)
            .map_err(|e| Failure(NdsStatus::Numerical, e.to_string()))
    })
}

/// Row-major `n × n` Jacobian at `(x, t)`.
///
/// # Safety
/// `x` must point to `n` doubles and `out` to `n * n`.
#[no_mangle]
pub unsafe extern "C" fn nds_system_jacobian(
    sys: *const NdsSystem,
    x: *const f64,
    n: usize,
    t: f64,
    out: *mut f64,
) -> NdsStatus {
    guard(|| {
        let s = system(sys)?;
        let x = state_arg(s, x, n)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let jac = s
            .jacobian(x, t)
            .map_err(|e| Failure(NdsStatus::Numerical, e.to_string()))?;
        let out = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = jac[(i, j)];
            }
        }
        Ok(())
    })
}

/// Certify `block` over the system's domain. `metric` is `identity`,
/// `diag:a,b,...` or `matrix:a,b;c,d`; null means identity.
///
/// # Safety
/// `sys` must be a live handle, `metric` null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nds_certify(
    sys: *const NdsSystem,
    block: NdsBlock,
    metric: *const c_char,
    samples: usize,
    out: *mut NdsCertificate,
) -> NdsStatus {
    guard(|| {
        let s = system(sys)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (block, n) = match block {
            NdsBlock::Full => (Block::Full, s.dim()),
            NdsBlock::Fast => (Block::Fast, s.n_fast()),
            NdsBlock::Slow => (Block::Slow, s.n_slow()),
        };
        let metric = if metric.is_null() {
            Metric::identity(n)
        } else {
            Metric::parse(str_arg(metric, "metric")?, n)
                .map_err(|e| Failure(NdsStatus::InvalidArgument, e.to_string()))?
        };
        match spreduce::certify_block(s, block, &metric, samples) {
            Ok(c) => {
                out.write(NdsCertificate {
                    beta: c.beta,
                    chi: c.chi,
                    worst_lambda: c.worst_lambda,
                    samples: c.samples,
                });
                Ok(())
            }
            Err(ReduceError::Contraction(ContractionError::NotContracting(v))) => {
                out.write(NdsCertificate {
                    beta: -v.lambda_max,
                    chi: f64::NAN,
                    worst_lambda: v.lambda_max,
                    samples: v.samples,
                });
                Err(ContractionError::NotContracting(v).into())
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Critical perturbation `ε_c`; `+inf` when the subsystems are decoupled.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nds_epsilon_critical(gains: *const NdsGainConstants, out: *mut f64) -> NdsStatus {
    guard(|| {
        let gc: GainConstants = gains.as_ref().ok_or_else(|| null("gains"))?.into();
        gc.validate()?;
        write(out, spreduce::epsilon_critical(&gc), "out")
    })
}

/// Envelope for a disturbance bounded by `d_sup`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nds_lemma1_bound(
    beta: f64,
    chi: f64,
    r0: f64,
    d_sup: f64,
    out: *mut NdsBoundCurve,
) -> NdsStatus {
    guard(|| write(out, bounds::lemma1_bound(beta, chi, r0, d_sup)?.into(), "out"))
}

/// Envelope for `|d| ≤ k0 + kx |x|` around a nominal trajectory bounded by
/// `x00`. Returns `SmallGainViolated` when `β ≤ χ kx`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nds_lemma2_bound(
    beta: f64,
    chi: f64,
    r0: f64,
    k0: f64,
    kx: f64,
    x00: f64,
    out: *mut NdsBoundCurve,
) -> NdsStatus {
    guard(|| {
        let d = LGainDisturbance { k0, kx, x00 };
        write(out, bounds::lemma2_bound(beta, chi, r0, &d)?.into(), "out")
    })
}

#[no_mangle]
pub extern "C" fn nds_bound_eval(curve: NdsBoundCurve, t: f64) -> f64 {
    BoundCurve {
        amplitude: curve.amplitude,
        rate: curve.rate,
        asymptote: curve.asymptote,
        valid: true,
    }
    .eval(t)
}

/// Fast-error bound and slow-error envelope for `ε < ε_c`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nds_lemma3_bounds(
    gains: *const NdsGainConstants,
    epsilon: f64,
    x_tilde0: f64,
    m_xtilde: *mut f64,
    ytilde: *mut NdsBoundCurve,
) -> NdsStatus {
    guard(|| {
        let gc: GainConstants = gains.as_ref().ok_or_else(|| null("gains"))?.into();
        if m_xtilde.is_null() || ytilde.is_null() {
            return Err(null("out"));
        }
        let b = spreduce::lemma3_bounds(&gc, epsilon, x_tilde0)?;
        m_xtilde.write(b.m_xtilde);
        ytilde.write(b.ytilde.into());
        Ok(())
    })
}

/// Boundary-layer and total transient times for `0 < ε < 1`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nds_transient_time(
    beta_f: f64,
    beta_g: f64,
    epsilon: f64,
    t_fast: *mut f64,
    t_total: *mut f64,
) -> NdsStatus {
    guard(|| {
        if t_fast.is_null() || t_total.is_null() {
            return Err(null("out"));
        }
        let tt = spreduce::transient_time(beta_f, beta_g, epsilon)?;
        t_fast.write(tt.t_fast);
        t_total.write(tt.t_total);
        Ok(())
    })
}

/// Full reduction report as JSON. `gains` may be null to fit constants
/// from samples. Free the string with [`nds_string_free`].
///
/// # Safety
/// `sys` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nds_reduce_json(
    sys: *const NdsSystem,
    gains: *const NdsGainConstants,
    samples: usize,
    out: *mut *mut c_char,
) -> NdsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = system(sys)?;
        let opts = ReduceOptions {
            samples,
            gains: gains.as_ref().map(GainConstants::from),
            ..Default::default()
        };
        let report = spreduce::reduce(s, &opts)?;
        let text = serde_json::to_string(&report).map_err(|e| Failure(NdsStatus::Numerical, e.to_string()))?;
        *out = CString::new(text)
            .map_err(|e| Failure(NdsStatus::Numerical, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
