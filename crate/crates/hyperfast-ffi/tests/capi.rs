use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use hyperfast_ffi::*;

fn last_error() -> String {
    let len = hf_last_error_length();
    let mut buf = vec![0 as std::ffi::c_char; len.max(1)];
    assert_eq!(unsafe { hf_last_error_message(buf.as_mut_ptr(), buf.len()) }, HfStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn ground_state_round_trip() {
    let mut p: *mut HfProfile = ptr::null_mut();
    assert_eq!(unsafe { hf_profile_ground_state(1.0, 0.5, 3, &mut p) }, HfStatus::Ok);
    assert!(!p.is_null());
    assert_eq!(hf_last_error_length(), 0);

    // 6 sech²r, with tail constant 24.
    let (mut v, mut dv, mut l) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(hf_profile_amplitude(p, &mut v), HfStatus::Ok);
        assert!((v - 6.0).abs() < 1e-8);
        assert_eq!(hf_profile_eval(p, 1.0, &mut v, &mut dv), HfStatus::Ok);
        let sech2 = 1.0 / 1f64.cosh().powi(2);
        assert!((v / (6.0 * sech2) - 1.0).abs() < 1e-8);
        assert!((dv / (-12.0 * sech2 * 1f64.tanh()) - 1.0).abs() < 1e-6);
        assert_eq!(hf_profile_eval(p, 2.0, ptr::null_mut(), &mut dv), HfStatus::Ok);
        assert_eq!(hf_profile_tail_constant(p, &mut l), HfStatus::Ok);
        assert!((l / 24.0 - 1.0).abs() < 1e-4);
        assert_eq!(hf_profile_eval(p, -1.0, &mut v, ptr::null_mut()), HfStatus::InvalidArgument);
        hf_profile_free(p);
        hf_profile_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported_per_call() {
    let mut p: *mut HfProfile = ptr::null_mut();
    // Below the critical exponent 1/5 there is no ground state.
    let status = unsafe { hf_profile_ground_state(1.0, 0.1, 3, &mut p) };
    assert_ne!(status, HfStatus::Ok);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { hf_profile_ground_state(1.0, 1.5, 3, &mut p) }, HfStatus::InvalidArgument);
    assert!(last_error().contains('m'), "{}", last_error());
    assert_eq!(unsafe { hf_profile_ground_state(1.0, 0.5, 3, ptr::null_mut()) }, HfStatus::NullPointer);

    // Too short a buffer is refused rather than truncated.
    let mut tiny = [0 as std::ffi::c_char; 2];
    assert_eq!(unsafe { hf_last_error_message(tiny.as_mut_ptr(), 2) }, HfStatus::BufferTooSmall);

    // A later success clears the message.
    assert_eq!(unsafe { hf_profile_for_extinction_time(2.0, 0.5, 3, &mut p) }, HfStatus::Ok);
    assert_eq!(hf_last_error_length(), 0);
    unsafe { hf_profile_free(p) };

    let s = unsafe { CStr::from_ptr(hf_status_string(HfStatus::BufferTooSmall)) };
    assert_eq!(s.to_str().unwrap(), "buffer too small");
    assert!((hf_critical_exponent(3) - 0.2).abs() < 1e-15);
}

#[test]
fn separable_evolution_through_the_c_api() {
    let (dim, m, radius, intervals) = (3, 0.5, 15.0, 600);
    let mut nodes = vec![0.0; intervals + 1];
    assert_eq!(unsafe { hf_uniform_grid_nodes(dim, radius, intervals, nodes.as_mut_ptr(), nodes.len()) }, HfStatus::Ok);
    assert_eq!(
        unsafe { hf_uniform_grid_nodes(dim, radius, intervals, nodes.as_mut_ptr(), intervals) },
        HfStatus::BufferTooSmall
    );

    let mut p: *mut HfProfile = ptr::null_mut();
    assert_eq!(unsafe { hf_profile_for_extinction_time(2.0, m, dim, &mut p) }, HfStatus::Ok);
    let v = |r: f64| {
        let mut x = 0.0;
        assert_eq!(unsafe { hf_profile_eval(p, r, &mut x, ptr::null_mut()) }, HfStatus::Ok);
        x
    };
    let u0: Vec<f64> = nodes.iter().map(|&r| v(r).powf(1.0 / m)).collect();
    let outs = [0.5, 1.0];
    let mut tr: *mut HfTrajectory = ptr::null_mut();
    let status = unsafe { hf_evolve(dim, m, radius, intervals, u0.as_ptr(), 1.0, outs.as_ptr(), 2, &mut tr) };
    assert_eq!(status, HfStatus::Ok, "{}", last_error());

    let mut count = 0;
    assert_eq!(unsafe { hf_trajectory_snapshot_count(tr, &mut count) }, HfStatus::Ok);
    assert!(count >= 3);
    let (mut t, mut u) = (0.0, vec![0.0; nodes.len()]);
    assert_eq!(unsafe { hf_trajectory_snapshot(tr, count - 1, &mut t, u.as_mut_ptr(), u.len()) }, HfStatus::Ok);
    assert!((t - 1.0).abs() < 1e-12);
    // Exact decay (1 − t/T)² of the separable solution.
    for (i, &r) in nodes.iter().enumerate().step_by(50) {
        let exact = 0.25 * v(r).powi(2);
        assert!((u[i] / exact - 1.0).abs() < 0.01, "r = {r}: {} vs {exact}", u[i]);
    }
    assert_eq!(
        unsafe { hf_trajectory_snapshot(tr, count, &mut t, u.as_mut_ptr(), u.len()) },
        HfStatus::IndexOutOfRange
    );
    unsafe {
        hf_trajectory_free(tr);
        hf_profile_free(p);
    }
}

#[test]
fn extinction_time_through_the_c_api() {
    let (dim, m, radius, intervals) = (3, 0.5, 15.0, 600);
    let mut p: *mut HfProfile = ptr::null_mut();
    assert_eq!(unsafe { hf_profile_for_extinction_time(2.0, m, dim, &mut p) }, HfStatus::Ok);
    let mut nodes = vec![0.0; intervals + 1];
    assert_eq!(unsafe { hf_uniform_grid_nodes(dim, radius, intervals, nodes.as_mut_ptr(), nodes.len()) }, HfStatus::Ok);
    let u0: Vec<f64> = nodes
        .iter()
        .map(|&r| {
            let mut x = 0.0;
            unsafe { hf_profile_eval(p, r, &mut x, ptr::null_mut()) };
            x * x
        })
        .collect();
    let mut tr: *mut HfTrajectory = ptr::null_mut();
    let status = unsafe { hf_evolve(dim, m, radius, intervals, u0.as_ptr(), 1e6, ptr::null(), 0, &mut tr) };
    assert_eq!(status, HfStatus::Ok, "{}", last_error());
    let mut t_est = 0.0;
    assert_eq!(unsafe { hf_trajectory_extinction_time(tr, &mut t_est) }, HfStatus::Ok);
    assert!((t_est / 2.0 - 1.0).abs() < 0.01, "T_est = {t_est}");
    unsafe {
        hf_trajectory_free(tr);
        hf_profile_free(p);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hyperfast.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "hf_last_error_message",
        "hf_profile_ground_state",
        "hf_profile_free",
        "hf_evolve",
        "hf_trajectory_snapshot",
        "hf_trajectory_free",
        "typedef struct HfProfile HfProfile",
        "HF_STATUS_NULL_POINTER = 2",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // Syntax-check as both C and C++ when a compiler is around.
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(&header).output() else {
            continue;
        };
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
