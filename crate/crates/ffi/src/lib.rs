//! C ABI over the `t3sc` denoiser.
//!
//! Every fallible call returns a [`T3scStatus`]; on failure the message is
//! kept per thread and read with [`t3sc_last_error`]. Handles are opaque and
//! released with their `_free` function. Cubes are `c x h x w` `float`
//! arrays, band-major and row-major within a band.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use t3sc::checkpoint::load_checkpoint;
use t3sc::hsi::{self, HsiCube};
use t3sc::metrics;
use t3sc::model::T3sc;
use t3sc::noise::{self, NoiseSpec};
use t3sc::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum T3scStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    /// Bad shapes, configuration or model state.
    Invalid = 2,
    /// File access or file format failure.
    Io = 3,
    /// Non-finite values.
    Numeric = 4,
    /// A panic was caught at the boundary.
    Internal = 5,
}

/// A loaded checkpoint.
pub struct T3scModel {
    inner: T3sc<f32>,
}

/// An HSR cube with its metadata.
pub struct T3scCube {
    inner: HsiCube,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> T3scStatus {
    match e.exit_code() {
        3 => T3scStatus::Io,
        4 => T3scStatus::Numeric,
        _ => T3scStatus::Invalid,
    }
}

struct Fail(T3scStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(T3scStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> T3scStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            T3scStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            T3scStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn cube_arg<'a>(data: *const f32, c: usize, h: usize, w: usize, what: &str) -> Result<&'a [f32], Fail> {
    if data.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid("cube extents must be positive"))?;
    Ok(std::slice::from_raw_parts(data, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn t3sc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn t3sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn t3sc_model_load(path: *const c_char, out: *mut *mut T3scModel) -> T3scStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = load_checkpoint::<f32>(&path)?;
        *out = Box::into_raw(Box::new(T3scModel { inner: ck.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`t3sc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn t3sc_model_free(model: *mut T3scModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of bands the spectral layer of `sensor` expects; a null `sensor`
/// selects the only sensor of a single-sensor model.
///
/// # Safety
/// Pointers must be valid; `sensor` may be null.
#[no_mangle]
pub unsafe extern "C" fn t3sc_model_bands(
    model: *const T3scModel,
    sensor: *const c_char,
    out: *mut usize,
) -> T3scStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is null"))?.inner;
        let id = sensor_arg(m, sensor)?;
        *out_arg(out, "out")? = m.layer(&id)?.bands();
        Ok(())
    })
}

/// Total number of trainable scalars.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn t3sc_model_param_count(model: *const T3scModel, out: *mut usize) -> T3scStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is null"))?.inner;
        *out_arg(out, "out")? = m.param_count();
        Ok(())
    })
}

/// Whether the model carries a noise estimator, so blind denoising works.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn t3sc_model_has_estimator(model: *const T3scModel, out: *mut bool) -> T3scStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is null"))?.inner;
        *out_arg(out, "out")? = m.estimator.is_some();
        Ok(())
    })
}

unsafe fn sensor_arg(m: &T3sc<f32>, sensor: *const c_char) -> Result<String, Fail> {
    if sensor.is_null() {
        m.default_sensor()
            .map(str::to_string)
            .ok_or_else(|| Fail(T3scStatus::Invalid, "model has several sensors; pass one".into()))
    } else {
        Ok(str_arg(sensor, "sensor")?.to_string())
    }
}

/// Denoises `input` into `output` (both `c * h * w` floats) with block
/// inference. With `blind` set, per-band weights come from the noise
/// estimator.
///
/// # Safety
/// `input` and `output` must each hold `c * h * w` floats; `sensor` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn t3sc_denoise(
    model: *const T3scModel,
    sensor: *const c_char,
    input: *const f32,
    c: usize,
    h: usize,
    w: usize,
    blind: bool,
    output: *mut f32,
) -> T3scStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is null"))?.inner;
        let id = sensor_arg(m, sensor)?;
        let y = Tensor::new(&[c, h, w], cube_arg(input, c, h, w, "input")?.to_vec())?;
        if output.is_null() {
            return Err(invalid("output is null"));
        }
        let x = if blind { m.denoise_blind(&y, &id)? } else { m.denoise(&y, &id, None)? };
        std::slice::from_raw_parts_mut(output, x.numel()).copy_from_slice(x.data());
        Ok(())
    })
}

/// Adds synthetic noise described by `spec` (`iid:S`, `band:MIN:MAX`,
/// `correlated[:B:E]`, `stripes[:S]`; deviations on the 0-255 scale).
///
/// # Safety
/// `input` and `output` must each hold `c * h * w` floats.
#[no_mangle]
pub unsafe extern "C" fn t3sc_add_noise(
    spec: *const c_char,
    seed: u64,
    input: *const f32,
    c: usize,
    h: usize,
    w: usize,
    output: *mut f32,
) -> T3scStatus {
    guard(|| {
        let spec: NoiseSpec = str_arg(spec, "spec")?.parse()?;
        let x = Tensor::new(&[c, h, w], cube_arg(input, c, h, w, "input")?.to_vec())?;
        if output.is_null() {
            return Err(invalid("output is null"));
        }
        let (y, _) = noise::apply(&x, &spec, seed)?;
        std::slice::from_raw_parts_mut(output, y.numel()).copy_from_slice(y.data());
        Ok(())
    })
}

/// Band-averaged PSNR with peak 1; identical inputs give +infinity.
///
/// # Safety
/// `reference` and `test` must each hold `c * h * w` floats.
#[no_mangle]
pub unsafe extern "C" fn t3sc_mpsnr(
    reference: *const f32,
    test: *const f32,
    c: usize,
    h: usize,
    w: usize,
    out: *mut f64,
) -> T3scStatus {
    guard(|| {
        let x = Tensor::new(&[c, h, w], cube_arg(reference, c, h, w, "reference")?.to_vec())?;
        let y = Tensor::new(&[c, h, w], cube_arg(test, c, h, w, "test")?.to_vec())?;
        *out_arg(out, "out")? = metrics::mpsnr(&x, &y)?;
        Ok(())
    })
}

/// Reads an HSR file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn t3sc_cube_read(path: *const c_char, out: *mut *mut T3scCube) -> T3scStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cube = hsi::read_hsr(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(T3scCube { inner: cube }));
        Ok(())
    })
}

/// Writes `c * h * w` floats as an HSR file, tagged with `sensor` unless it is
/// null.
///
/// # Safety
/// `data` must hold `c * h * w` floats; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn t3sc_cube_write(
    path: *const c_char,
    data: *const f32,
    c: usize,
    h: usize,
    w: usize,
    sensor: *const c_char,
) -> T3scStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let mut cube = HsiCube::new(Tensor::new(&[c, h, w], cube_arg(data, c, h, w, "data")?.to_vec())?)?;
        if !sensor.is_null() {
            cube.sensor_id = Some(str_arg(sensor, "sensor")?.to_string());
        }
        hsi::write_hsr(path, &cube)?;
        Ok(())
    })
}

/// Extents of a cube.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn t3sc_cube_shape(
    cube: *const T3scCube,
    c: *mut usize,
    h: *mut usize,
    w: *mut usize,
) -> T3scStatus {
    guard(|| {
        let cube = &cube.as_ref().ok_or_else(|| invalid("cube is null"))?.inner;
        *out_arg(c, "c")? = cube.bands();
        *out_arg(h, "h")? = cube.height();
        *out_arg(w, "w")? = cube.width();
        Ok(())
    })
}

/// Samples of a cube, valid while the handle lives; null for a null handle.
///
/// # Safety
/// `cube` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn t3sc_cube_data(cube: *const T3scCube) -> *const f32 {
    cube.as_ref().map_or(ptr::null(), |c| c.inner.data.data().as_ptr())
}

/// # Safety
/// `cube` must come from [`t3sc_cube_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn t3sc_cube_free(cube: *mut T3scCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}
