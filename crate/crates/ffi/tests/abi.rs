use std::ffi::{CStr, CString};
use std::ptr;

use enjoint::image::Image;
use enjoint::model::{Checkpoint, DecodeConfig, Mode, Model, NetworkConfig, NetworkWeights};
use enjoint_ffi::*;

fn test_image(size: usize) -> Image {
    Image::new(size, size, (0..3 * size * size).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()).unwrap()
}

fn init(seed: u64) -> *mut EnjointModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { enjoint_model_init(seed, &mut m) }, EnjointStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn enhance_matches_rust_api() {
    let m = init(3);
    let s = unsafe { enjoint_model_input_size(m) } as usize;
    let img = test_image(s);
    let mut out = vec![0f32; 3 * s * s];
    let st = unsafe { enjoint_enhance(m, img.data().as_ptr(), s as u32, s as u32, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, EnjointStatus::Ok);
    let rust = Model::init(NetworkConfig::default(), 3).unwrap();
    let want = rust.forward(&img, Mode::Enhance, &DecodeConfig::default()).unwrap().enhanced.unwrap();
    assert_eq!(out, want.data());
    unsafe { enjoint_model_free(m) };
}

#[test]
fn detect_reports_count_and_truncates() {
    let m = init(5);
    let s = unsafe { enjoint_model_input_size(m) };
    let img = test_image(s as usize);
    let mut n = 0usize;
    // a low threshold on an untrained model yields plenty of boxes
    let st = unsafe { enjoint_detect(m, img.data().as_ptr(), s, s, 0.01, 0.6, ptr::null_mut(), 0, &mut n) };
    let rust = Model::init(NetworkConfig::default(), 5).unwrap();
    let dc = DecodeConfig { conf_thresh: 0.01, nms_iou: 0.6, ..DecodeConfig::default() };
    let want = rust.forward(&img, Mode::Detect, &dc).unwrap().detections.unwrap();
    assert_eq!(n, want.len());
    if n > 0 {
        assert_eq!(st, EnjointStatus::BufferTooSmall);
    }
    let mut buf = vec![EnjointDetection::default(); n];
    let st = unsafe { enjoint_detect(m, img.data().as_ptr(), s, s, 0.01, 0.6, buf.as_mut_ptr(), n, &mut n) };
    assert_eq!(st, EnjointStatus::Ok);
    for (got, w) in buf.iter().zip(&want) {
        assert_eq!([got.x1, got.y1, got.x2, got.y2], w.bbox.to_array());
        assert_eq!(got.class_id as usize, w.class_id);
        assert_eq!(got.confidence, w.confidence);
    }
    unsafe { enjoint_model_free(m) };
}

#[test]
fn load_checkpoint_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = NetworkConfig::default();
    Checkpoint::new(cfg.clone(), NetworkWeights::init(&cfg, 9).unwrap()).save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { enjoint_model_load(c.as_ptr(), &mut m) }, EnjointStatus::Ok);
    assert_eq!(unsafe { enjoint_model_class_count(m) } as usize, cfg.class_count);

    let img = test_image(8);
    let mut out = vec![0f32; 3 * 64];
    let st = unsafe { enjoint_enhance(m, img.data().as_ptr(), 8, 8, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, EnjointStatus::Shape);
    let msg = unsafe { CStr::from_ptr(enjoint_last_error()) }.to_str().unwrap().to_string();
    assert!(msg.contains("expects"), "{msg}");

    let s = cfg.input_size as u32;
    let img = test_image(s as usize);
    let st = unsafe { enjoint_enhance(m, img.data().as_ptr(), s, s, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, EnjointStatus::BufferTooSmall);
    unsafe { enjoint_model_free(m) };

    let missing = CString::new(dir.path().join("nope.ckpt").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { enjoint_model_load(missing.as_ptr(), &mut m) }, EnjointStatus::Io);
    assert!(m.is_null());

    std::fs::write(&path, b"garbage").unwrap();
    assert_eq!(unsafe { enjoint_model_load(c.as_ptr(), &mut m) }, EnjointStatus::Format);
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/enjoint.h")).unwrap();
    for name in [
        "typedef struct EnjointModel EnjointModel",
        "enjoint_model_load",
        "enjoint_model_init",
        "enjoint_model_free",
        "enjoint_enhance",
        "enjoint_detect",
        "enjoint_last_error",
        "ENJOINT_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}
