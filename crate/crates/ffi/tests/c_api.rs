use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use scan2d::reference::reference_forward;
use scan2d::tensor::save;
use scan2d::verify::max_rel_err;
use scan2d::Problem;
use scan2d_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { scan2d_last_error(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert!(n >= s.len());
    s
}

fn random(h: usize, w: usize, n: usize, seed: u64) -> *mut Scan2dProblem {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { scan2d_problem_random(h, w, n, seed, &mut p) },
        Scan2dStatus::Ok
    );
    assert!(!p.is_null());
    p
}

#[test]
fn forward_matches_the_reference_for_every_2d_variant() {
    let (h, w, n, seed) = (11, 9, 3, 21);
    let p = random(h, w, n, seed);
    let want = {
        let q = Problem::<f64>::random(h, w, n, seed).unwrap();
        reference_forward(&q.x, &q.inputs, &q.params).unwrap().y
    };
    for v in [Scan2dVariant::Seq2d, Scan2dVariant::Naive2d, Scan2dVariant::Tiled2d] {
        let mut y = vec![0.0; h * w];
        let s = unsafe { scan2d_forward(p, v, Scan2dDtype::F64, 4, 3, y.as_mut_ptr(), y.len()) };
        assert_eq!(s, Scan2dStatus::Ok, "{v:?}");
        assert!(max_rel_err(&y, want.data()) < 1e-12, "{v:?}");
        let s = unsafe { scan2d_forward(p, v, Scan2dDtype::F32, 4, 1, y.as_mut_ptr(), y.len()) };
        assert_eq!(s, Scan2dStatus::Ok);
        assert!(max_rel_err(&y, want.data()) < 1e-4, "{v:?} f32");
    }
    let (mut hh, mut ww, mut nn) = (0, 0, 0);
    assert_eq!(
        unsafe { scan2d_problem_dims(p, &mut hh, &mut ww, &mut nn) },
        Scan2dStatus::Ok
    );
    assert_eq!((hh, ww, nn), (h, w, n));
    unsafe { scan2d_problem_free(p) };
}

#[test]
fn problems_built_from_arrays_agree_with_the_library() {
    let q = Problem::<f64>::random(4, 6, 2, 8).unwrap();
    let (b, c) = (q.inputs.b().to_vec(), q.inputs.c().to_vec());
    let mut p = ptr::null_mut();
    let s = unsafe {
        scan2d_problem_new(
            4,
            6,
            2,
            q.x.data().as_ptr(),
            q.inputs.z_raw().as_ptr(),
            b.as_ptr(),
            c.as_ptr(),
            q.params.a().as_ptr(),
            q.params.skip(),
            q.params.bias(),
            &mut p,
        )
    };
    assert_eq!(s, Scan2dStatus::Ok, "{}", last_error());
    let mut y = vec![0.0; 24];
    unsafe { scan2d_forward(p, Scan2dVariant::Tiled2d, Scan2dDtype::F64, 2, 1, y.as_mut_ptr(), 24) };
    let want = reference_forward(&q.x, &q.inputs, &q.params).unwrap().y;
    assert!(max_rel_err(&y, want.data()) < 1e-12);
    unsafe { scan2d_problem_free(p) };
}

#[test]
fn problems_load_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let q = Problem::<f64>::random(5, 5, 2, 4).unwrap();
    let (xp, pp) = (dir.path().join("x.t2dm"), dir.path().join("p.t2dm"));
    save(&q.x, &xp).unwrap();
    q.write_params(std::fs::File::create(&pp).unwrap()).unwrap();
    let cx = CString::new(xp.to_str().unwrap()).unwrap();
    let cp = CString::new(pp.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { scan2d_problem_load(cx.as_ptr(), cp.as_ptr(), &mut p) },
        Scan2dStatus::Ok
    );
    let mut y = vec![0.0; 25];
    unsafe { scan2d_forward(p, Scan2dVariant::Naive2d, Scan2dDtype::F64, 0, 1, y.as_mut_ptr(), 25) };
    let want = reference_forward(&q.x, &q.inputs, &q.params).unwrap().y;
    assert!(max_rel_err(&y, want.data()) < 1e-12);
    unsafe { scan2d_problem_free(p) };

    let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
    let s = unsafe { scan2d_problem_load(missing.as_ptr(), cp.as_ptr(), &mut p) };
    assert_eq!(s, Scan2dStatus::Io);
    let other = dir.path().join("other.t2dm");
    Problem::<f64>::random(3, 3, 2, 4)
        .unwrap()
        .write_params(std::fs::File::create(&other).unwrap())
        .unwrap();
    let co = CString::new(other.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { scan2d_problem_load(cx.as_ptr(), co.as_ptr(), &mut p) },
        Scan2dStatus::ShapeMismatch
    );
    assert_eq!(
        unsafe { scan2d_problem_load(cx.as_ptr(), cx.as_ptr(), &mut p) },
        Scan2dStatus::Format
    );
}

#[test]
fn errors_map_to_status_codes() {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { scan2d_problem_random(0, 3, 1, 0, &mut p) },
        Scan2dStatus::ShapeMismatch
    );
    assert!(last_error().contains("zero-sized"));
    assert_eq!(
        unsafe { scan2d_problem_random(3, 3, 1, 0, ptr::null_mut()) },
        Scan2dStatus::NullPointer
    );
    assert_eq!(last_error(), "out is null");

    let x = [1.0, f64::NAN];
    let ones = [1.0; 2];
    let s = unsafe {
        scan2d_problem_new(
            1,
            2,
            1,
            ones.as_ptr(),
            x.as_ptr(),
            ones.as_ptr(),
            ones.as_ptr(),
            [-0.5].as_ptr(),
            0.0,
            0.0,
            &mut p,
        )
    };
    assert_eq!(s, Scan2dStatus::NonFinite);
    let s = unsafe {
        scan2d_problem_new(
            1,
            2,
            1,
            ones.as_ptr(),
            ptr::null(),
            ones.as_ptr(),
            ones.as_ptr(),
            [-0.5].as_ptr(),
            0.0,
            0.0,
            &mut p,
        )
    };
    assert_eq!(s, Scan2dStatus::NullPointer);
    assert_eq!(last_error(), "z_raw is null");

    let p = random(3, 3, 1, 0);
    let mut y = [0.0; 8];
    let s = unsafe { scan2d_forward(p, Scan2dVariant::Tiled2d, Scan2dDtype::F64, 2, 1, y.as_mut_ptr(), 8) };
    assert_eq!(s, Scan2dStatus::BufferTooSmall);
    let mut y = [0.0; 9];
    let s = unsafe { scan2d_forward(p, Scan2dVariant::Tiled2d, Scan2dDtype::F64, 0, 1, y.as_mut_ptr(), 9) };
    assert_eq!(s, Scan2dStatus::InvalidArgument);
    let s = unsafe {
        scan2d_forward(
            ptr::null(),
            Scan2dVariant::Tiled2d,
            Scan2dDtype::F64,
            2,
            1,
            y.as_mut_ptr(),
            9,
        )
    };
    assert_eq!(s, Scan2dStatus::NullPointer);
    unsafe { scan2d_problem_free(p) };
    unsafe { scan2d_problem_free(ptr::null_mut()) };
}

#[test]
fn last_error_truncates_and_reports_full_length() {
    let mut p = ptr::null_mut();
    unsafe { scan2d_problem_random(0, 0, 0, 0, &mut p) };
    let full = unsafe { scan2d_last_error(ptr::null_mut(), 0) };
    let mut small = [1 as c_char; 6];
    assert_eq!(unsafe { scan2d_last_error(small.as_mut_ptr(), 6) }, full);
    assert_eq!(small[5], 0);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(), 5);
}

#[test]
fn analysis_functions() {
    let mut r = Scan2dMemReport::default();
    assert_eq!(
        unsafe { scan2d_simulate_traffic(1, 56, 56, 16, 0, &mut r) },
        Scan2dStatus::Ok
    );
    assert_eq!(r.intermediate_traffic, 100_352);
    assert_eq!(
        unsafe { scan2d_simulate_traffic(2, 56, 56, 16, 8, &mut r) },
        Scan2dStatus::Ok
    );
    assert_eq!(r.carry_traffic, 25_088);
    assert_eq!(
        unsafe { scan2d_simulate_traffic(3, 56, 56, 16, 8, &mut r) },
        Scan2dStatus::InvalidArgument
    );

    let mut w = Scan2dPaddingWaste::default();
    unsafe { scan2d_padding_waste(14, 14, 32, Scan2dPaddingScheme::FullRowScan, &mut w) };
    assert_eq!(w.pad_per_row, 18.0);
    unsafe { scan2d_padding_waste(14, 14, 32, Scan2dPaddingScheme::Segmented, &mut w) };
    assert_eq!(w.pad_per_row, 2.0);

    let mut k = 0.0;
    unsafe { scan2d_impulse_coefficient(Scan2dScanKind::Grid2d, 3, 0.5, 0, 0, 1, 0, &mut k) };
    assert_eq!(k, 0.5);
    unsafe { scan2d_impulse_coefficient(Scan2dScanKind::RowMajor1d, 3, 0.5, 0, 0, 1, 0, &mut k) };
    assert_eq!(k, 0.125);
    let s = unsafe { scan2d_impulse_coefficient(Scan2dScanKind::Grid2d, 3, 0.5, 1, 0, 0, 0, &mut k) };
    assert_eq!(s, Scan2dStatus::InvalidArgument);

    let v = unsafe { CStr::from_ptr(scan2d_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/scan2d.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for f in [
        "scan2d_version",
        "scan2d_last_error",
        "scan2d_problem_new",
        "scan2d_problem_random",
        "scan2d_problem_load",
        "scan2d_problem_free",
        "scan2d_problem_dims",
        "scan2d_forward",
        "scan2d_simulate_traffic",
        "scan2d_padding_waste",
        "scan2d_impulse_coefficient",
        "typedef struct Scan2dProblem Scan2dProblem",
        "SCAN2D_STATUS_BUFFER_TOO_SMALL = 7",
        "SCAN2D_DTYPE_F32 = 0",
    ] {
        assert!(text.contains(f), "{f} missing from the header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "scan2d.h"

int main(void) {
    Scan2dProblem *p = NULL;
    if (scan2d_problem_random(6, 5, 2, 3, &p) != SCAN2D_STATUS_OK) return 1;
    double a[30], b[30];
    if (scan2d_forward(p, SCAN2D_VARIANT_SEQ2D, SCAN2D_DTYPE_F64, 0, 1, a, 30) != SCAN2D_STATUS_OK) return 2;
    if (scan2d_forward(p, SCAN2D_VARIANT_TILED2D, SCAN2D_DTYPE_F64, 2, 2, b, 30) != SCAN2D_STATUS_OK) return 3;
    double worst = 0;
    for (int k = 0; k < 30; k++) {
        double d = a[k] > b[k] ? a[k] - b[k] : b[k] - a[k];
        if (d > worst) worst = d;
    }
    if (scan2d_forward(p, SCAN2D_VARIANT_TILED2D, SCAN2D_DTYPE_F64, 0, 1, b, 30) != SCAN2D_STATUS_INVALID_ARGUMENT) return 4;
    char msg[128];
    scan2d_last_error(msg, sizeof msg);
    scan2d_problem_free(p);
    printf("%s %.3g %s\n", scan2d_version(), worst, msg);
    return worst < 1e-12 ? 0 : 5;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libscan2d_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap_or_else(|e| panic!("cannot run {cc}: {e}"));
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit {:?}: {stdout}", out.status.code());
    assert!(stdout.contains("tile"), "{stdout}");
}
