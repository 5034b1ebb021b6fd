//! C ABI over the enjoint network.
//!
//! Models are opaque handles created by [`enjoint_model_load`] or
//! [`enjoint_model_init`] and released with [`enjoint_model_free`]. Every
//! fallible call returns an [`EnjointStatus`]; the message of the most
//! recent failure on the calling thread is available through
//! [`enjoint_last_error`]. Images are planar `[3, H, W]` `float` buffers in
//! `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use enjoint::image::Image;
use enjoint::model::{Checkpoint, DecodeConfig, Mode, Model, NetworkConfig};
use enjoint::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnjointStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Io = 5,
    Format = 6,
    /// Output buffer too small; the required size is still reported.
    BufferTooSmall = 7,
    Panic = 8,
}

/// One detection in input-pixel coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnjointDetection {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub class_id: u32,
    pub confidence: f32,
}

/// Opaque model handle.
pub struct EnjointModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EnjointStatus {
    match e {
        Error::Shape(_) => EnjointStatus::Shape,
        Error::Numeric(_) => EnjointStatus::Numeric,
        Error::InvalidArgument(_) => EnjointStatus::InvalidArgument,
        Error::Format { .. } | Error::Json(_) => EnjointStatus::Format,
        Error::Io(_) => EnjointStatus::Io,
    }
}

fn fail(status: EnjointStatus, msg: impl Into<String>) -> EnjointStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), EnjointStatus>) -> EnjointStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EnjointStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(EnjointStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: enjoint::Result<T>) -> Result<T, EnjointStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn model_ref<'a>(m: *const EnjointModel) -> Result<&'a Model, EnjointStatus> {
    m.as_ref().map(|h| &h.model).ok_or_else(|| fail(EnjointStatus::NullPointer, "model handle is null"))
}

unsafe fn input_image(model: &Model, pixels: *const f32, width: u32, height: u32) -> Result<Image, EnjointStatus> {
    if pixels.is_null() {
        return Err(fail(EnjointStatus::NullPointer, "pixel buffer is null"));
    }
    let s = model.config().input_size;
    if width as usize != s || height as usize != s {
        return Err(fail(EnjointStatus::Shape, format!("image is {width}x{height}, model expects {s}x{s}")));
    }
    let data = std::slice::from_raw_parts(pixels, 3 * s * s).to_vec();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(fail(EnjointStatus::InvalidArgument, "pixel buffer contains non-finite values"));
    }
    lift(Image::new(s, s, data))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn enjoint_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn enjoint_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn enjoint_model_load(path: *const c_char, out: *mut *mut EnjointModel) -> EnjointStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(EnjointStatus::NullPointer, "path or output pointer is null"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(EnjointStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let ck = lift(Checkpoint::load(Path::new(path)))?;
        let model = lift(Model::new(ck.config, ck.weights))?;
        *out = Box::into_raw(Box::new(EnjointModel { model }));
        Ok(())
    })
}

/// Creates a randomly initialised model with the default configuration.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn enjoint_model_init(seed: u64, out: *mut *mut EnjointModel) -> EnjointStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(EnjointStatus::NullPointer, "output pointer is null"));
        }
        let model = lift(Model::init(NetworkConfig::default(), seed))?;
        *out = Box::into_raw(Box::new(EnjointModel { model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn enjoint_model_free(model: *mut EnjointModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square input side in pixels, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn enjoint_model_input_size(model: *const EnjointModel) -> u32 {
    model.as_ref().map_or(0, |h| h.model.config().input_size as u32)
}

/// Number of object classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn enjoint_model_class_count(model: *const EnjointModel) -> u32 {
    model.as_ref().map_or(0, |h| h.model.config().class_count as u32)
}

/// Enhances one image into `out` (`3 * width * height` floats).
///
/// # Safety
/// `pixels` must hold `3 * width * height` floats and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn enjoint_enhance(
    model: *const EnjointModel,
    pixels: *const f32,
    width: u32,
    height: u32,
    out: *mut f32,
    out_len: usize,
) -> EnjointStatus {
    guard(|| {
        let model = model_ref(model)?;
        let img = input_image(model, pixels, width, height)?;
        if out.is_null() {
            return Err(fail(EnjointStatus::NullPointer, "output buffer is null"));
        }
        if out_len < img.data().len() {
            return Err(fail(EnjointStatus::BufferTooSmall, format!("need {} floats, got {out_len}", img.data().len())));
        }
        let res = lift(model.forward(&img, Mode::Enhance, &DecodeConfig::default()))?;
        let enhanced = res.enhanced.expect("enhance mode");
        std::slice::from_raw_parts_mut(out, enhanced.data().len()).copy_from_slice(enhanced.data());
        Ok(())
    })
}

/// Detects objects. Writes up to `capacity` detections (highest confidence
/// first) and the total found into `*count`; returns `BufferTooSmall` when
/// they did not all fit.
///
/// # Safety
/// `pixels` must hold `3 * width * height` floats, `out` `capacity`
/// detections (may be null when `capacity` is 0) and `count` be writable.
#[no_mangle]
pub unsafe extern "C" fn enjoint_detect(
    model: *const EnjointModel,
    pixels: *const f32,
    width: u32,
    height: u32,
    conf_thresh: f32,
    nms_iou: f32,
    out: *mut EnjointDetection,
    capacity: usize,
    count: *mut usize,
) -> EnjointStatus {
    guard(|| {
        let model = model_ref(model)?;
        if count.is_null() || (out.is_null() && capacity > 0) {
            return Err(fail(EnjointStatus::NullPointer, "output pointer is null"));
        }
        *count = 0;
        let img = input_image(model, pixels, width, height)?;
        let dc = DecodeConfig { conf_thresh, nms_iou, ..DecodeConfig::default() };
        let res = lift(model.forward(&img, Mode::Detect, &dc))?;
        let dets = res.detections.expect("detect mode");
        *count = dets.len();
        for (i, d) in dets.iter().take(capacity).enumerate() {
            *out.add(i) = EnjointDetection {
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                x2: d.bbox.x2,
                y2: d.bbox.y2,
                class_id: d.class_id as u32,
                confidence: d.confidence,
            };
        }
        if dets.len() > capacity {
            return Err(fail(EnjointStatus::BufferTooSmall, format!("{} detections, capacity {capacity}", dets.len())));
        }
        Ok(())
    })
}
