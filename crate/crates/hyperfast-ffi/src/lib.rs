//! C ABI over the `hyperfast` core.
//!
//! Objects cross the boundary as opaque handles (`HfProfile`, `HfTrajectory`)
//! returned through an out-pointer by their constructors and released with
//! the matching `*_free`. Every fallible call returns an [`HfStatus`]; on failure the
//! message is kept per thread and read back with [`hf_last_error_message`].
//! Panics never unwind into C: they are caught and reported as
//! `HF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use hyperfast::evolution::{estimate_extinction_time, evolve, EvolutionConfig, Trajectory};
use hyperfast::stationary::{find_ground_state, profile_for_extinction_time};
use hyperfast::{Error, RadialField, RadialGrid, StationaryProfile};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    /// A parameter or the grid was rejected before any work was done.
    InvalidArgument = 1,
    NullPointer = 2,
    /// A solver ran but failed (no bracket, Newton divergence, step collapse...).
    Numerical = 3,
    /// The caller's buffer is shorter than the data; nothing was written.
    BufferTooSmall = 4,
    IndexOutOfRange = 5,
    Panic = 6,
}

/// Ground-state profile V of −ΔV = cV^{1/m}.
pub struct HfProfile(StationaryProfile);

/// Output of a physical-time evolution.
pub struct HfTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: HfStatus, msg: impl Into<String>) -> HfStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> HfStatus {
    let status = match err {
        Error::InvalidParameter { .. } | Error::GridTooSmall { .. } | Error::Config { .. } => HfStatus::InvalidArgument,
        _ => HfStatus::Numerical,
    };
    fail(status, err.to_string())
}

/// Runs `f`, translating core errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), HfStatus>) -> HfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(HfStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), HfStatus> {
    if p.is_null() {
        Err(fail(HfStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn dim_of(dim: u32) -> Result<usize, HfStatus> {
    usize::try_from(dim).map_err(|_| fail(HfStatus::InvalidArgument, "dimension out of range"))
}

/// Length in bytes of the last error message including its NUL, or 0 if the
/// last call on this thread succeeded.
#[no_mangle]
pub extern "C" fn hf_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes_with_nul().len()))
}

/// Copies the last error message (NUL-terminated) into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hf_last_error_message(buf: *mut c_char, len: usize) -> HfStatus {
    if buf.is_null() {
        return HfStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[0u8][..], |s| s.as_bytes_with_nul());
        if bytes.len() > len {
            return HfStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        HfStatus::Ok
    })
}

/// Static description of a status code. Never null; do not free.
#[no_mangle]
pub extern "C" fn hf_status_string(status: HfStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        HfStatus::Ok => b"ok\0",
        HfStatus::InvalidArgument => b"invalid argument\0",
        HfStatus::NullPointer => b"null pointer\0",
        HfStatus::Numerical => b"numerical failure\0",
        HfStatus::BufferTooSmall => b"buffer too small\0",
        HfStatus::IndexOutOfRange => b"index out of range\0",
        HfStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Critical exponent (N−2)/(N+2) below which the ground state does not exist.
#[no_mangle]
pub extern "C" fn hf_critical_exponent(dim: u32) -> f64 {
    hyperfast::geometry::critical_exponent(dim as usize)
}

/// Ground state for coupling `c`. On success `*out` owns a new handle.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hf_profile_ground_state(c: f64, m: f64, dim: u32, out: *mut *mut HfProfile) -> HfStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = find_ground_state(c, m, dim_of(dim)?, 1e-12).map_err(from_error)?;
        *out = Box::into_raw(Box::new(HfProfile(p)));
        Ok(())
    })
}

/// Profile whose separable solution (1 − t/T)^{1/(1−m)} V^{1/m} vanishes at T.
///
/// # Safety
/// As [`hf_profile_ground_state`].
#[no_mangle]
pub unsafe extern "C" fn hf_profile_for_extinction_time(
    big_t: f64,
    m: f64,
    dim: u32,
    out: *mut *mut HfProfile,
) -> HfStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = profile_for_extinction_time(big_t, m, dim_of(dim)?).map_err(from_error)?;
        *out = Box::into_raw(Box::new(HfProfile(p)));
        Ok(())
    })
}

/// V(r) and V′(r); either output may be null.
///
/// # Safety
/// `profile` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_profile_eval(profile: *const HfProfile, r: f64, v: *mut f64, dv: *mut f64) -> HfStatus {
    guard(|| {
        non_null(profile, "profile")?;
        if r.is_nan() || r < 0.0 {
            return Err(fail(HfStatus::InvalidArgument, "r must be non-negative"));
        }
        let (a, b) = (*profile).0.eval(r);
        if !v.is_null() {
            *v = a;
        }
        if !dv.is_null() {
            *dv = b;
        }
        Ok(())
    })
}

/// V(0).
///
/// # Safety
/// `profile` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_profile_amplitude(profile: *const HfProfile, out: *mut f64) -> HfStatus {
    guard(|| {
        non_null(profile, "profile")?;
        non_null(out, "out")?;
        *out = (*profile).0.amplitude();
        Ok(())
    })
}

/// The limit of e^{(N−1)r}V(r).
///
/// # Safety
/// `profile` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_profile_tail_constant(profile: *const HfProfile, out: *mut f64) -> HfStatus {
    guard(|| {
        non_null(profile, "profile")?;
        non_null(out, "out")?;
        *out = (*profile).0.tail_constant();
        Ok(())
    })
}

/// # Safety
/// `profile` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_profile_free(profile: *mut HfProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Writes the `intervals + 1` nodes of the uniform grid on [0, radius].
///
/// # Safety
/// `nodes` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_uniform_grid_nodes(
    dim: u32,
    radius: f64,
    intervals: usize,
    nodes: *mut f64,
    len: usize,
) -> HfStatus {
    guard(|| {
        non_null(nodes, "nodes")?;
        let g = RadialGrid::uniform(dim_of(dim)?, radius, intervals).map_err(from_error)?;
        if len < g.len() {
            return Err(fail(HfStatus::BufferTooSmall, format!("need {} nodes, buffer holds {len}", g.len())));
        }
        ptr::copy_nonoverlapping(g.nodes().as_ptr(), nodes, g.len());
        Ok(())
    })
}

/// Evolves `u0` (sampled on the uniform grid of `intervals` cells) to `t_end`,
/// keeping a snapshot at each of the `n_outputs` requested times as well as
/// the initial and final states. `outputs` may be null when `n_outputs` is 0.
///
/// # Safety
/// `u0` must point to `intervals + 1` readable doubles, `outputs` to
/// `n_outputs` readable doubles, and `out` to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn hf_evolve(
    dim: u32,
    m: f64,
    radius: f64,
    intervals: usize,
    u0: *const f64,
    t_end: f64,
    outputs: *const f64,
    n_outputs: usize,
    out: *mut *mut HfTrajectory,
) -> HfStatus {
    guard(|| {
        non_null(u0, "u0")?;
        non_null(out, "out")?;
        if n_outputs > 0 {
            non_null(outputs, "outputs")?;
        }
        let g = Arc::new(RadialGrid::uniform(dim_of(dim)?, radius, intervals).map_err(from_error)?);
        let values = std::slice::from_raw_parts(u0, g.len()).to_vec();
        let times = if n_outputs == 0 { &[][..] } else { std::slice::from_raw_parts(outputs, n_outputs) };
        let u0 = RadialField::new(g.clone(), values).map_err(from_error)?;
        let cfg = EvolutionConfig::new(m, g);
        let tr = evolve(&u0, t_end, times, &cfg).map_err(from_error)?;
        *out = Box::into_raw(Box::new(HfTrajectory(tr)));
        Ok(())
    })
}

/// Number of stored snapshots.
///
/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_trajectory_snapshot_count(traj: *const HfTrajectory, out: *mut usize) -> HfStatus {
    guard(|| {
        non_null(traj, "traj")?;
        non_null(out, "out")?;
        *out = (*traj).0.snapshots.len();
        Ok(())
    })
}

/// Copies snapshot `index` into `values` and its time into `*t`.
///
/// # Safety
/// `traj` must be a live handle, `t` writable and `values` must point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_trajectory_snapshot(
    traj: *const HfTrajectory,
    index: usize,
    t: *mut f64,
    values: *mut f64,
    len: usize,
) -> HfStatus {
    guard(|| {
        non_null(traj, "traj")?;
        non_null(t, "t")?;
        non_null(values, "values")?;
        let snaps = &(*traj).0.snapshots;
        let s = snaps.get(index).ok_or_else(|| {
            fail(HfStatus::IndexOutOfRange, format!("snapshot {index} of {}", snaps.len()))
        })?;
        let u = s.u.values();
        if len < u.len() {
            return Err(fail(HfStatus::BufferTooSmall, format!("need {} values, buffer holds {len}", u.len())));
        }
        *t = s.t;
        ptr::copy_nonoverlapping(u.as_ptr(), values, u.len());
        Ok(())
    })
}

/// Extinction time fitted from the recorded E(t) series; meaningful for
/// runs continued to (near) extinction.
///
/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_trajectory_extinction_time(traj: *const HfTrajectory, out: *mut f64) -> HfStatus {
    guard(|| {
        non_null(traj, "traj")?;
        non_null(out, "out")?;
        *out = estimate_extinction_time(&(*traj).0).map_err(from_error)?.t_est;
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hf_trajectory_free(traj: *mut HfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
