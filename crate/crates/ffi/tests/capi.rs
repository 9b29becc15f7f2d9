use std::ffi::{CStr, CString};
use std::ptr;

use t3sc::checkpoint::{save_checkpoint, Checkpoint};
use t3sc::model::{ModelConfig, SensorSpec, T3sc};
use t3sc::Tensor;
use t3sc_ffi::*;

fn small_model(estimator: bool) -> T3sc<f32> {
    T3sc::new(
        ModelConfig {
            sensors: vec![SensorSpec { id: "s".into(), bands: 5 }],
            p1: 4,
            p2: 6,
            rank: 2,
            side: 3,
            t1: 2,
            t2: 2,
            estimator,
            estimator_tile: 8,
            ..ModelConfig::default()
        },
        3,
    )
    .unwrap()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = t3sc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn cube() -> Vec<f32> {
    (0..5 * 9 * 11).map(|i| ((i * 37) % 101) as f32 / 101.0).collect()
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(t3sc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn denoise_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = small_model(true);
    save_checkpoint(&path, &Checkpoint::from_model(model.clone())).unwrap();

    let mut h: *mut T3scModel = ptr::null_mut();
    let p = cstr(&path);
    assert_eq!(unsafe { t3sc_model_load(p.as_ptr(), &mut h) }, T3scStatus::Ok);
    assert!(t3sc_last_error().is_null());

    let mut bands = 0usize;
    assert_eq!(unsafe { t3sc_model_bands(h, ptr::null(), &mut bands) }, T3scStatus::Ok);
    assert_eq!(bands, 5);
    let mut count = 0usize;
    assert_eq!(unsafe { t3sc_model_param_count(h, &mut count) }, T3scStatus::Ok);
    assert_eq!(count, model.param_count());
    let mut est = false;
    assert_eq!(unsafe { t3sc_model_has_estimator(h, &mut est) }, T3scStatus::Ok);
    assert!(est);

    let y = cube();
    let t = Tensor::new(&[5, 9, 11], y.clone()).unwrap();
    let mut out = vec![0.0f32; y.len()];
    let sensor = CString::new("s").unwrap();
    let st = unsafe { t3sc_denoise(h, sensor.as_ptr(), y.as_ptr(), 5, 9, 11, false, out.as_mut_ptr()) };
    assert_eq!(st, T3scStatus::Ok);
    assert_eq!(out, model.denoise(&t, "s", None).unwrap().into_data());
    let st = unsafe { t3sc_denoise(h, ptr::null(), y.as_ptr(), 5, 9, 11, true, out.as_mut_ptr()) };
    assert_eq!(st, T3scStatus::Ok);
    assert_eq!(out, model.denoise_blind(&t, "s").unwrap().into_data());

    let st = unsafe { t3sc_denoise(h, ptr::null(), y.as_ptr(), 4, 9, 11, false, out.as_mut_ptr()) };
    assert_eq!(st, T3scStatus::Invalid);
    assert!(last_error().contains("dimension"));
    let other = CString::new("other").unwrap();
    let st = unsafe { t3sc_denoise(h, other.as_ptr(), y.as_ptr(), 5, 9, 11, false, out.as_mut_ptr()) };
    assert_eq!(st, T3scStatus::Invalid);
    unsafe { t3sc_model_free(h) };
}

#[test]
fn blind_without_estimator_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &Checkpoint::from_model(small_model(false))).unwrap();
    let mut h: *mut T3scModel = ptr::null_mut();
    let p = cstr(&path);
    assert_eq!(unsafe { t3sc_model_load(p.as_ptr(), &mut h) }, T3scStatus::Ok);
    let y = cube();
    let mut out = vec![0.0f32; y.len()];
    let st = unsafe { t3sc_denoise(h, ptr::null(), y.as_ptr(), 5, 9, 11, true, out.as_mut_ptr()) };
    assert_eq!(st, T3scStatus::Invalid);
    assert!(last_error().contains("estimator"));
    unsafe { t3sc_model_free(h) };
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut h: *mut T3scModel = ptr::null_mut();
    let missing = cstr(&dir.path().join("none.ckpt"));
    assert_eq!(unsafe { t3sc_model_load(missing.as_ptr(), &mut h) }, T3scStatus::Io);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let junk = cstr(&junk);
    assert_eq!(unsafe { t3sc_model_load(junk.as_ptr(), &mut h) }, T3scStatus::Io);
    assert!(last_error().contains("magic"));

    assert_eq!(unsafe { t3sc_model_load(ptr::null(), &mut h) }, T3scStatus::InvalidArgument);
    assert_eq!(unsafe { t3sc_model_load(junk.as_ptr(), ptr::null_mut()) }, T3scStatus::InvalidArgument);
    unsafe { t3sc_model_free(ptr::null_mut()) };
}

#[test]
fn cube_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("c.hsr"));
    let y = cube();
    let sensor = CString::new("s").unwrap();
    assert_eq!(
        unsafe { t3sc_cube_write(path.as_ptr(), y.as_ptr(), 5, 9, 11, sensor.as_ptr()) },
        T3scStatus::Ok
    );
    let mut h: *mut T3scCube = ptr::null_mut();
    assert_eq!(unsafe { t3sc_cube_read(path.as_ptr(), &mut h) }, T3scStatus::Ok);
    let (mut c, mut r, mut w) = (0, 0, 0);
    assert_eq!(unsafe { t3sc_cube_shape(h, &mut c, &mut r, &mut w) }, T3scStatus::Ok);
    assert_eq!((c, r, w), (5, 9, 11));
    let data = unsafe { std::slice::from_raw_parts(t3sc_cube_data(h), c * r * w) };
    assert_eq!(data, &y[..]);
    unsafe { t3sc_cube_free(h) };
    assert!(unsafe { t3sc_cube_data(ptr::null()) }.is_null());
    assert_eq!(
        unsafe { t3sc_cube_write(path.as_ptr(), y.as_ptr(), 0, 9, 11, ptr::null()) },
        T3scStatus::InvalidArgument
    );
}

#[test]
fn noise_and_psnr() {
    let y = cube();
    let mut out = vec![0.0f32; y.len()];
    let zero = CString::new("iid:0").unwrap();
    assert_eq!(
        unsafe { t3sc_add_noise(zero.as_ptr(), 4, y.as_ptr(), 5, 9, 11, out.as_mut_ptr()) },
        T3scStatus::Ok
    );
    assert_eq!(out, y);
    let mut psnr = 0.0;
    assert_eq!(unsafe { t3sc_mpsnr(y.as_ptr(), out.as_ptr(), 5, 9, 11, &mut psnr) }, T3scStatus::Ok);
    assert_eq!(psnr, f64::INFINITY);

    let spec = CString::new("iid:25").unwrap();
    let mut again = vec![0.0f32; y.len()];
    unsafe {
        t3sc_add_noise(spec.as_ptr(), 4, y.as_ptr(), 5, 9, 11, out.as_mut_ptr());
        t3sc_add_noise(spec.as_ptr(), 4, y.as_ptr(), 5, 9, 11, again.as_mut_ptr());
    }
    assert_eq!(out, again);
    assert_eq!(unsafe { t3sc_mpsnr(y.as_ptr(), out.as_ptr(), 5, 9, 11, &mut psnr) }, T3scStatus::Ok);
    assert!(psnr.is_finite() && psnr > 10.0 && psnr < 30.0, "{psnr}");

    let bad = CString::new("pink:3").unwrap();
    assert_eq!(
        unsafe { t3sc_add_noise(bad.as_ptr(), 4, y.as_ptr(), 5, 9, 11, out.as_mut_ptr()) },
        T3scStatus::Invalid
    );
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/t3sc.h")).unwrap();
    for name in [
        "t3sc_model_load",
        "t3sc_model_free",
        "t3sc_denoise",
        "t3sc_last_error",
        "T3SC_STATUS_OK",
        "typedef struct T3scModel T3scModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"t3sc.h\"\nint main(void) { T3scModel *m = 0; T3scStatus s = t3sc_model_load(\"x\", &m); \
         t3sc_model_free(m); return s == T3SC_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
