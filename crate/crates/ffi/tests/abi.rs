use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use partstab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ps_last_error_message()) }.to_string_lossy().into_owned()
}

fn paper() -> *mut PsScenario {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ps_scenario_paper_auv(&mut s) }, PsStatus::Ok);
    assert!(!s.is_null());
    s
}

fn toml(text: &str) -> (PsStatus, *mut PsScenario) {
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { ps_scenario_from_toml(c.as_ptr(), &mut s) };
    (st, s)
}

fn repo_file(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)).unwrap()
}

#[test]
fn dims_of_paper_scenario() {
    let s = paper();
    let mut d = PsDims::default();
    assert_eq!(unsafe { ps_scenario_dims(s, &mut d) }, PsStatus::Ok);
    assert_eq!(d, PsDims { n1: 3, n2: 3, m: 3 });
    unsafe { ps_scenario_free(s) };
}

#[test]
fn toml_and_builtin_agree() {
    let (st, a) = toml(&repo_file("configs/auv_paper.toml"));
    assert_eq!(st, PsStatus::Ok);
    let b = paper();
    let x = [0.3, 0.1, -0.2, 0.4, 0.2, -0.1];
    let (mut ua, mut ub) = ([0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(ps_control(a, 0.37, 0.3, x.as_ptr(), 6, ua.as_mut_ptr(), 3), PsStatus::Ok);
        assert_eq!(ps_control(b, 0.37, 0.3, x.as_ptr(), 6, ub.as_mut_ptr(), 3), PsStatus::Ok);
        ps_scenario_free(a);
        ps_scenario_free(b);
    }
    assert_eq!(ua, ub);
}

#[test]
fn invalid_config_reports_field() {
    let text = repo_file("configs/auv_paper.toml").replace("delta_prime = 1.5", "delta_prime = 0.9");
    let (st, s) = toml(&text);
    assert_eq!(st, PsStatus::ConfigError);
    assert!(s.is_null());
    assert!(last_error().contains("tube.delta_prime"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ps_scenario_from_toml(ptr::null(), &mut s) }, PsStatus::NullPointer);
    let mut d = PsDims::default();
    assert_eq!(unsafe { ps_scenario_dims(ptr::null(), &mut d) }, PsStatus::NullPointer);
    let mut out = 0.0;
    let p = paper();
    assert_eq!(unsafe { ps_tube_distance(p, ptr::null(), 6, 0.0, &mut out) }, PsStatus::NullPointer);
    unsafe {
        ps_scenario_free(p);
        ps_scenario_free(ptr::null_mut());
        ps_trajectory_free(ptr::null_mut());
        ps_string_free(ptr::null_mut());
    }
}

#[test]
fn tube_distance_and_amplitude() {
    let s = paper();
    let x0 = [0.0, 0.0, -1.0, 0.25 * std::f64::consts::PI, 0.25 * std::f64::consts::PI, 0.25 * std::f64::consts::PI];
    let mut d = 0.0;
    assert_eq!(unsafe { ps_tube_distance(s, x0.as_ptr(), 6, 0.0, &mut d) }, PsStatus::Ok);
    assert!((d - (2f64.sqrt() - 0.5)).abs() < 1e-14);

    let on_curve = [1.0, 0.0, 0.0, 0.1, 0.2, 0.3];
    let mut a = [f64::NAN; 3];
    assert_eq!(unsafe { ps_amplitude(s, on_curve.as_ptr(), 6, 0.0, a.as_mut_ptr(), 3) }, PsStatus::Ok);
    assert_eq!(a, [0.0; 3]);

    assert_eq!(unsafe { ps_amplitude(s, x0.as_ptr(), 6, 0.0, a.as_mut_ptr(), 3) }, PsStatus::Ok);
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 15.0 * 2f64.sqrt()).abs() < 1e-9, "F is orthogonal so |a| = alpha |y - y*|");

    assert_eq!(unsafe { ps_amplitude(s, x0.as_ptr(), 5, 0.0, a.as_mut_ptr(), 3) }, PsStatus::InvalidArgument);
    assert_eq!(unsafe { ps_amplitude(s, x0.as_ptr(), 6, 0.0, a.as_mut_ptr(), 2) }, PsStatus::BufferTooSmall);
    let pitch = [0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0];
    assert_eq!(unsafe { ps_amplitude(s, pitch.as_ptr(), 6, 0.0, a.as_mut_ptr(), 3) }, PsStatus::ComputationError);
    assert!(!last_error().is_empty());
    unsafe { ps_scenario_free(s) };
}

#[test]
fn simulate_and_copy_out() {
    let text = repo_file("configs/auv_paper.toml").replace("horizon = 20.0", "horizon = 1.0");
    let (st, s) = toml(&text);
    assert_eq!(st, PsStatus::Ok);
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { ps_simulate(s, &mut t) }, PsStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { ps_trajectory_len(t, &mut len) }, PsStatus::Ok);
    assert_eq!(len, 201);
    let mut times = vec![0.0; len];
    let mut states = vec![0.0; len * 6];
    let mut controls = vec![0.0; len * 3];
    let mut errors = vec![0.0; len];
    let st = unsafe {
        ps_trajectory_copy(t, len, times.as_mut_ptr(), states.as_mut_ptr(), controls.as_mut_ptr(), errors.as_mut_ptr())
    };
    assert_eq!(st, PsStatus::Ok);
    assert_eq!(times[0], 0.0);
    assert_eq!(times[len - 1], 1.0);
    assert_eq!(&states[..3], &[0.0, 0.0, -1.0]);
    assert!((errors[0] - 2f64.sqrt()).abs() < 1e-15);
    assert!(errors[len - 1] < errors[0]);
    assert_eq!(unsafe { ps_trajectory_copy(t, len + 1, times.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, PsStatus::InvalidArgument);
    unsafe {
        ps_trajectory_free(t);
        ps_scenario_free(s);
    }
}

#[test]
fn simulation_failure_returns_partial_trajectory() {
    let text = repo_file("configs/auv_paper.toml")
        .replace("horizon = 20.0", "horizon = 1.0")
        .replace("alpha = 15.0", "alpha = 200.0")
        .replace("delta_prime = 1.5", "delta_prime = 1.0000001");
    let (st, s) = toml(&text);
    assert_eq!(st, PsStatus::Ok);
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { ps_simulate(s, &mut t) }, PsStatus::SimulationFailed);
    assert!(last_error().contains("guard"), "{}", last_error());
    let mut len = 0;
    assert_eq!(unsafe { ps_trajectory_len(t, &mut len) }, PsStatus::Ok);
    assert!(len > 0);
    unsafe {
        ps_trajectory_free(t);
        ps_scenario_free(s);
    }
}

#[test]
fn analyze_returns_report_json() {
    let text = repo_file("configs/auv_paper.toml")
        .replace("samples = 10000", "samples = 300")
        .replace("samples = 2000", "samples = 200")
        .replace("count = 50", "count = 4");
    let (st, s) = toml(&text);
    assert_eq!(st, PsStatus::Ok);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ps_analyze_json(s, &mut json) }, PsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe {
        ps_string_free(json);
        ps_scenario_free(s);
    }
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["command"], "analyze");
    assert_eq!(v["contraction"]["count"], 4);
    assert_eq!(v["bounds"]["feasible"], true);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ps_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/partstab.h")).unwrap();
    for name in [
        "ps_last_error_message",
        "ps_version",
        "ps_scenario_from_toml",
        "ps_scenario_paper_auv",
        "ps_scenario_free",
        "ps_scenario_dims",
        "ps_simulate",
        "ps_trajectory_free",
        "ps_trajectory_len",
        "ps_trajectory_copy",
        "ps_tube_distance",
        "ps_amplitude",
        "ps_control",
        "ps_analyze_json",
        "ps_string_free",
        "typedef struct PsScenario PsScenario",
        "PS_STATUS_SIMULATION_FAILED = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "partstab.h"
int main(void) {
    PsScenario *s = 0;
    PsDims d;
    PsStatus st = ps_scenario_paper_auv(&s);
    if (st != PS_STATUS_OK) return 1;
    st = ps_scenario_dims(s, &d);
    ps_scenario_free(s);
    return st == PS_STATUS_OK && d.n1 == 3 ? 0 : 2;
}
"#,
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
