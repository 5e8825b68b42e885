//! C ABI over the `sctnet` crate.
//!
//! Images cross the boundary as interleaved RGB `f32` buffers of
//! `height * width * 3` values, row-major. Every function returns a
//! [`SctnetStatus`]; on failure [`sctnet_last_error`] describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sctnet::hdrmath::{mu_law_value, HdrImage, LdrBracket, LdrImage};
use sctnet::model::checkpoint::load_model;
use sctnet::model::{ModelConfig, ModelWeights, Sctnet};
use sctnet::tensor::Tensor;
use sctnet::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SctnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Domain = 4,
    Config = 5,
    Schema = 6,
    Format = 7,
    Io = 8,
    Internal = 9,
}

/// A loaded network. Create with [`sctnet_model_load`] or
/// [`sctnet_model_init`], release with [`sctnet_model_free`].
pub struct SctnetModel {
    config: ModelConfig,
    weights: ModelWeights<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SctnetStatus {
    match e {
        Error::Dimension(_) => SctnetStatus::Dimension,
        Error::Domain(_) | Error::NonFiniteGradient(_) => SctnetStatus::Domain,
        Error::Config(_) | Error::Usage(_) => SctnetStatus::Config,
        Error::Schema { .. } => SctnetStatus::Schema,
        Error::Format { .. } | Error::Sample { .. } => SctnetStatus::Format,
        Error::Io { .. } => SctnetStatus::Io,
    }
}

struct Fail(SctnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SctnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SctnetStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SctnetStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SctnetStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SctnetStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

fn pixel_count(height: usize, width: usize) -> Result<usize, Fail> {
    if height == 0 || width == 0 {
        return Err(invalid("image size must be positive"));
    }
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| invalid("image size overflows"))
}

unsafe fn read_rgb(p: *const f32, height: usize, width: usize, what: &str) -> Result<Tensor<f32>, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let n = pixel_count(height, width)?;
    let src = std::slice::from_raw_parts(p, n);
    let plane = height * width;
    let mut data = vec![0.0f32; n];
    for (i, px) in src.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c];
        }
    }
    Ok(Tensor::new([3, height, width], data)?)
}

unsafe fn write_rgb(t: &Tensor<f32>, out: *mut f32) {
    let (h, w) = (t.dim(1), t.dim(2));
    let plane = h * w;
    let dst = std::slice::from_raw_parts_mut(out, plane * 3);
    let src = t.data();
    for i in 0..plane {
        for c in 0..3 {
            dst[i * 3 + c] = src[c * plane + i];
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sctnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sctnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint written by `sctnet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sctnet_model_load(path: *const c_char, out: *mut *mut SctnetModel) -> SctnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let (config, weights, _) = load_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(SctnetModel { config, weights }));
        Ok(())
    })
}

/// Creates an untrained model from a preset name (`desk`, `full`, `toy`)
/// with seeded weights.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sctnet_model_init(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut SctnetModel,
) -> SctnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ModelConfig::preset(str_arg(preset, "preset")?)?;
        let weights = ModelWeights::init(&config, seed)?;
        *out = Box::into_raw(Box::new(SctnetModel { config, weights }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sctnet_model_free(model: *mut SctnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sctnet_model_parameter_count(model: *const SctnetModel, out: *mut u64) -> SctnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.weights.iter().map(|(_, t)| t.len() as u64).sum();
        Ok(())
    })
}

/// Merges a short/reference/long bracket into a linear HDR image aligned
/// to the reference. `exposure_times` holds three strictly increasing
/// times; `hdr_out` receives `height * width * 3` values.
///
/// # Safety
/// All pointers must be valid for the sizes implied by `height` and
/// `width`.
#[no_mangle]
pub unsafe extern "C" fn sctnet_merge(
    model: *const SctnetModel,
    short_ldr: *const f32,
    reference_ldr: *const f32,
    long_ldr: *const f32,
    exposure_times: *const f64,
    height: usize,
    width: usize,
    hdr_out: *mut f32,
) -> SctnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if exposure_times.is_null() {
            return Err(null("exposure_times"));
        }
        if hdr_out.is_null() {
            return Err(null("hdr_out"));
        }
        let t = std::slice::from_raw_parts(exposure_times, 3);
        let frame = |p, i: usize, what| -> Result<LdrImage, Fail> {
            let ev = t[i].log2() - t[1].log2();
            Ok(LdrImage::new(read_rgb(p, height, width, what)?, t[i], ev)?)
        };
        let bracket = LdrBracket::new(
            frame(short_ldr, 0, "short_ldr")?,
            frame(reference_ldr, 1, "reference_ldr")?,
            frame(long_ldr, 2, "long_ldr")?,
        )?;
        let net = Sctnet::new(&m.config, &m.weights)?;
        let hdr = net.predict(&bracket)?;
        write_rgb(hdr.pixels(), hdr_out);
        Ok(())
    })
}

/// Applies the μ-law tone curve element-wise; `input` and `output` may
/// alias.
///
/// # Safety
/// Both pointers must be valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn sctnet_mu_law(input: *const f32, len: usize, mu: f64, output: *mut f32) -> SctnetStatus {
    guard(|| {
        if input.is_null() || output.is_null() {
            return Err(null("buffer"));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid("mu must be positive"));
        }
        for i in 0..len {
            let v = *input.add(i);
            *output.add(i) = mu_law_value(v.max(0.0) as f64, mu) as f32;
        }
        Ok(())
    })
}

unsafe fn pair(a: *const f32, b: *const f32, height: usize, width: usize) -> Result<(Tensor<f32>, Tensor<f32>), Fail> {
    Ok((read_rgb(a, height, width, "a")?, read_rgb(b, height, width, "b")?))
}

/// PSNR in dB with the given peak; identical images give +infinity.
///
/// # Safety
/// `a` and `b` must hold `height * width * 3` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sctnet_psnr(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    peak: f64,
    out: *mut f64,
) -> SctnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = pair(a, b, height, width)?;
        *out = sctnet::metrics::psnr(&a, &b, peak)?;
        Ok(())
    })
}

/// Mean SSIM over channels with an 11×11 Gaussian window.
///
/// # Safety
/// `a` and `b` must hold `height * width * 3` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sctnet_ssim(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> SctnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = pair(a, b, height, width)?;
        *out = sctnet::metrics::ssim(&a, &b)?;
        Ok(())
    })
}

/// Reads a PFM file into a newly allocated interleaved buffer. Free it with
/// [`sctnet_buffer_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sctnet_read_pfm(
    path: *const c_char,
    data_out: *mut *mut f32,
    height_out: *mut usize,
    width_out: *mut usize,
) -> SctnetStatus {
    guard(|| {
        if data_out.is_null() || height_out.is_null() || width_out.is_null() {
            return Err(null("out"));
        }
        let img = HdrImage::new(sctnet::data::read_pfm(Path::new(str_arg(path, "path")?))?)?;
        let (h, w) = (img.height(), img.width());
        let mut buf = vec![0.0f32; h * w * 3].into_boxed_slice();
        write_rgb(img.pixels(), buf.as_mut_ptr());
        *data_out = Box::into_raw(buf).cast();
        *height_out = h;
        *width_out = w;
        Ok(())
    })
}

/// Frees a buffer from [`sctnet_read_pfm`].
///
/// # Safety
/// `data` must come from [`sctnet_read_pfm`] with the same dimensions.
#[no_mangle]
pub unsafe extern "C" fn sctnet_buffer_free(data: *mut f32, height: usize, width: usize) {
    if !data.is_null() {
        let n = height * width * 3;
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(data, n)));
    }
}
