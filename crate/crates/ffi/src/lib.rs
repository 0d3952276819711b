//! C ABI over the radpair simulator.
//!
//! Objects cross the boundary as opaque pointers created by `rp_*` constructors
//! and released with the matching `*_free`. Every fallible call returns an
//! [`RpStatus`]; on failure [`rp_last_error_message`] describes the problem for
//! the calling thread. Complex matrices are passed row-major with interleaved
//! real and imaginary parts (`2·n·n` doubles).

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use num_complex::Complex64;
use radpair::analysis;
use radpair::evolve::{self, EvolutionResult};
use radpair::superop;
use radpair::{Approach, ComplexMatrix, Error, RateConstants, SpinSystem, Superoperator};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Input rejected by physical validation (non-Hermitian H, bad projector, invalid ρ0).
    Physics = 3,
    /// Numerical failure, e.g. an empty fit window or a singular solve.
    Numerical = 4,
    Panic = 5,
}

pub const RP_APPROACH_HABERKORN: u32 = 0;
pub const RP_APPROACH_MEASUREMENT: u32 = 1;

pub const RP_COLUMN_TIME: u32 = 0;
pub const RP_COLUMN_POP_S: u32 = 1;
pub const RP_COLUMN_POP_T: u32 = 2;
pub const RP_COLUMN_YIELD_S: u32 = 3;
pub const RP_COLUMN_YIELD_T: u32 = 4;
pub const RP_COLUMN_TRACE: u32 = 5;
pub const RP_COLUMN_COHERENCE_ST: u32 = 6;

/// Opaque spin system handle.
pub struct RpSystem {
    inner: SpinSystem,
}

/// Opaque handle to the result of one propagation.
pub struct RpEvolution {
    inner: EvolutionResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(RpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NonHermitian(_)
            | Error::NotProjector(_)
            | Error::InvalidDensityMatrix(_)
            | Error::ComplexPopulation(_) => RpStatus::Physics,
            Error::Singular | Error::EmptyFitWindow | Error::TooFewSamples { .. } => {
                RpStatus::Numerical
            }
            _ => RpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            RpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RpStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn interleaved_matrix(p: *const f64, dim: usize, what: &str) -> Result<ComplexMatrix, Failure> {
    let data = unsafe { slice(p, 2 * dim * dim, what)? };
    Ok(ComplexMatrix::from_fn(dim, dim, |i, j| {
        let k = 2 * (i * dim + j);
        Complex64::new(data[k], data[k + 1])
    }))
}

fn approach(code: u32) -> Result<Approach, Failure> {
    match code {
        RP_APPROACH_HABERKORN => Ok(Approach::Haberkorn),
        RP_APPROACH_MEASUREMENT => Ok(Approach::Measurement),
        other => Err(Failure(RpStatus::InvalidArgument, format!("unknown approach {other}"))),
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null, caller guarantees it is writable.
    unsafe { out.write(value) };
    Ok(())
}

/// Two-level model with coupling `omega` in the (|S⟩, |T⟩) basis.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rp_system_two_level(omega: f64, out: *mut *mut RpSystem) -> RpStatus {
    guard(|| {
        let sys = SpinSystem::minimal_two_level(omega)?;
        let handle = Box::into_raw(Box::new(RpSystem { inner: sys }));
        unsafe { write_out(out, handle, "out") }.inspect_err(|_| {
            drop(unsafe { Box::from_raw(handle) });
        })
    })
}

/// System from a `dim × dim` Hamiltonian and singlet projector.
///
/// # Safety
/// `hamiltonian` and `q_singlet` must each point to `2·dim·dim` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_system_from_matrices(
    dim: usize,
    hamiltonian: *const f64,
    q_singlet: *const f64,
    out: *mut *mut RpSystem,
) -> RpStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure(RpStatus::InvalidArgument, "dim must be positive".into()));
        }
        let h = unsafe { interleaved_matrix(hamiltonian, dim, "hamiltonian")? };
        let q = unsafe { interleaved_matrix(q_singlet, dim, "q_singlet")? };
        let sys = SpinSystem::from_matrices(h, q)?;
        let handle = Box::into_raw(Box::new(RpSystem { inner: sys }));
        unsafe { write_out(out, handle, "out") }.inspect_err(|_| {
            drop(unsafe { Box::from_raw(handle) });
        })
    })
}

/// Hilbert-space dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle from an `rp_system_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn rp_system_dim(sys: *const RpSystem) -> usize {
    unsafe { sys.as_ref() }.map_or(0, |s| s.inner.dim())
}

/// # Safety
/// `sys` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_system_free(sys: *mut RpSystem) {
    if !sys.is_null() {
        drop(unsafe { Box::from_raw(sys) });
    }
}

/// Propagates the singlet state `Q_S/Tr Q_S` over `times`.
///
/// # Safety
/// `sys` must be a live handle, `times` must point to `n_times` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_evolve(
    sys: *const RpSystem,
    k_s: f64,
    k_t: f64,
    approach_code: u32,
    times: *const f64,
    n_times: usize,
    out: *mut *mut RpEvolution,
) -> RpStatus {
    guard(|| {
        let sys = unsafe { sys.as_ref() }.ok_or_else(|| null("sys"))?;
        let times = unsafe { slice(times, n_times, "times")? };
        let rates = RateConstants::new(k_s, k_t)?;
        let s = Superoperator::for_approach(approach(approach_code)?, &sys.inner, rates)?;
        let rho0 = sys.inner.singlet_state()?;
        let res = evolve::propagate(&s, &rho0, times)?;
        let handle = Box::into_raw(Box::new(RpEvolution { inner: res }));
        unsafe { write_out(out, handle, "out") }.inspect_err(|_| {
            drop(unsafe { Box::from_raw(handle) });
        })
    })
}

/// Number of time points, or 0 for a null handle.
///
/// # Safety
/// `evo` must be null or a live handle from [`rp_evolve`].
#[no_mangle]
pub unsafe extern "C" fn rp_evolution_len(evo: *const RpEvolution) -> usize {
    unsafe { evo.as_ref() }.map_or(0, |e| e.inner.len())
}

/// Copies one `RP_COLUMN_*` series into `out`, which must hold `len` doubles
/// with `len` equal to [`rp_evolution_len`].
///
/// # Safety
/// `evo` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rp_evolution_column(
    evo: *const RpEvolution,
    column: u32,
    out: *mut f64,
    len: usize,
) -> RpStatus {
    guard(|| {
        let evo = &unsafe { evo.as_ref() }.ok_or_else(|| null("evolution"))?.inner;
        let src = match column {
            RP_COLUMN_TIME => &evo.times,
            RP_COLUMN_POP_S => &evo.pop_s,
            RP_COLUMN_POP_T => &evo.pop_t,
            RP_COLUMN_YIELD_S => &evo.yield_s,
            RP_COLUMN_YIELD_T => &evo.yield_t,
            RP_COLUMN_TRACE => &evo.trace,
            RP_COLUMN_COHERENCE_ST => &evo.coherence_st,
            other => {
                return Err(Failure(RpStatus::InvalidArgument, format!("unknown column {other}")))
            }
        };
        if len != src.len() {
            return Err(Failure(
                RpStatus::InvalidArgument,
                format!("buffer holds {len} values, series has {}", src.len()),
            ));
        }
        if out.is_null() && len > 0 {
            return Err(null("out"));
        }
        // SAFETY: `out` has room for `len` doubles per the contract above.
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, len) };
        Ok(())
    })
}

/// # Safety
/// `evo` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_evolution_free(evo: *mut RpEvolution) {
    if !evo.is_null() {
        drop(unsafe { Box::from_raw(evo) });
    }
}

/// Single-exponential fit of `pop_s` over the samples in `[0.05, 0.5]`.
///
/// # Safety
/// `times` and `pop_s` must point to `n` doubles; `rate` and `r_squared`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_zeno_rate_fit(
    times: *const f64,
    pop_s: *const f64,
    n: usize,
    rate: *mut f64,
    r_squared: *mut f64,
) -> RpStatus {
    guard(|| {
        let t = unsafe { slice(times, n, "times")? };
        let p = unsafe { slice(pop_s, n, "pop_s")? };
        if rate.is_null() {
            return Err(null("rate"));
        }
        if r_squared.is_null() {
            return Err(null("r_squared"));
        }
        let fit = analysis::zeno_rate_fit(t, p)?;
        unsafe {
            rate.write(fit.rate);
            r_squared.write(fit.r_squared);
        }
        Ok(())
    })
}

/// Max-norm residual of `W − V − ½k_S(Q_S⁻)² − ½k_T(Q_T⁻)²`.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_decoherence_gap_residual(
    sys: *const RpSystem,
    k_s: f64,
    k_t: f64,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        let sys = unsafe { sys.as_ref() }.ok_or_else(|| null("sys"))?;
        let r = superop::decoherence_gap_residual(&sys.inner, RateConstants::new(k_s, k_t)?)?;
        unsafe { write_out(out, r, "out") }
    })
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next `rp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn rp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
