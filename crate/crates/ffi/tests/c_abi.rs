//! The C entry points called through their Rust declarations.

use std::ffi::{CStr, CString};
use std::ptr;

use afnet_ffi::*;

fn last_error() -> String {
    let p = afnet_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_model(tag: &str, seed: u64) -> *mut AfnetModel {
    let tag = CString::new(tag).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { afnet_model_new(tag.as_ptr(), 0, seed, &mut m) };
    assert_eq!(st, AfnetStatus::Ok);
    assert!(!m.is_null());
    m
}

fn inputs(size: usize) -> (Vec<f32>, Vec<f32>) {
    let p = size * size;
    let o = (0..3 * p).map(|i| ((i * 37) % 101) as f32 / 50.0 - 1.0).collect();
    let a = (0..2 * p).map(|i| ((i * 53) % 89) as f32 / 44.0 - 1.0).collect();
    (o, a)
}

#[test]
fn predict_returns_probabilities() {
    let m = new_model("MPVN-RM", 1);
    let k = unsafe { afnet_model_num_classes(m) };
    assert_eq!(k, 6);
    assert_eq!(unsafe { afnet_model_uses_aux(m) }, 1);
    let (o, a) = inputs(32);
    let mut probs = vec![0f32; k * 32 * 32];
    let st = unsafe { afnet_model_predict(m, o.as_ptr(), a.as_ptr(), 32, 32, probs.as_mut_ptr()) };
    assert_eq!(st, AfnetStatus::Ok);
    assert!(afnet_last_error().is_null());
    for i in 0..32 * 32 {
        let s: f32 = (0..k).map(|c| probs[c * 1024 + i]).sum();
        assert!((s - 1.0).abs() < 1e-4);
    }
    unsafe { afnet_model_free(m) };
}

#[test]
fn single_path_model_accepts_null_aux() {
    let m = new_model("DFN", 0);
    assert_eq!(unsafe { afnet_model_uses_aux(m) }, 0);
    let (o, _) = inputs(32);
    let mut probs = vec![0f32; 6 * 32 * 32];
    let st = unsafe { afnet_model_predict(m, o.as_ptr(), ptr::null(), 32, 32, probs.as_mut_ptr()) };
    assert_eq!(st, AfnetStatus::Ok);
    unsafe { afnet_model_free(m) };
}

#[test]
fn errors_carry_status_and_message() {
    let bad = CString::new("UNET").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { afnet_model_new(bad.as_ptr(), 0, 0, &mut m) };
    assert_eq!(st, AfnetStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("UNET"));

    let st = unsafe { afnet_model_new(ptr::null(), 0, 0, &mut m) };
    assert_eq!(st, AfnetStatus::NullPointer);

    let m = new_model("MPVN", 0);
    let (o, a) = inputs(20);
    let mut probs = vec![0f32; 6 * 400];
    let st = unsafe { afnet_model_predict(m, o.as_ptr(), a.as_ptr(), 20, 20, probs.as_mut_ptr()) };
    assert_eq!(st, AfnetStatus::Geometry, "{}", last_error());
    let st = unsafe { afnet_model_predict(m, o.as_ptr(), ptr::null(), 20, 20, probs.as_mut_ptr()) };
    assert_eq!(st, AfnetStatus::NullPointer);
    assert!(last_error().contains("aux"));
    unsafe { afnet_model_free(m) };
    unsafe { afnet_model_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let tag = CString::new("MPVN-RM").unwrap();
    let path = CString::new("/nonexistent/model.afck").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { afnet_model_load(tag.as_ptr(), 0, path.as_ptr(), &mut m) };
    assert_eq!(st, AfnetStatus::Io);
    assert!(last_error().contains("/nonexistent/model.afck"));
}

#[test]
fn ndvi_matches_formula() {
    let nir = [0.8f32, 0.0, 0.2, 0.5];
    let red = [0.2f32, 0.0, 0.6, 0.5];
    let mut out = [9f32; 4];
    let st = unsafe { afnet_ndvi(nir.as_ptr(), red.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(st, AfnetStatus::Ok);
    for i in 0..4 {
        let d = nir[i] + red[i];
        let want = if d == 0.0 { 0.0 } else { (nir[i] - red[i]) / d };
        assert!((out[i] - want).abs() < 1e-6);
    }
}

#[test]
fn confusion_counts_and_scores() {
    let gt = [0u8, 0, 1, 1, 2, 255];
    let pred = [0u8, 1, 1, 1, 0, 2];
    let mut counts = [0u64; 9];
    let mut oa = 0.0;
    let mut f1 = [0.0; 3];
    let st = unsafe { afnet_confusion(pred.as_ptr(), gt.as_ptr(), 6, 3, counts.as_mut_ptr(), &mut oa, f1.as_mut_ptr()) };
    assert_eq!(st, AfnetStatus::Ok);
    assert_eq!(counts, [1, 1, 0, 0, 2, 0, 1, 0, 0]);
    assert_eq!(oa, 3.0 / 5.0);
    // class 1: precision 2/3, recall 1
    assert!((f1[1] - 0.8).abs() < 1e-12);
    assert_eq!(f1[2], 0.0);

    let st = unsafe { afnet_confusion(pred.as_ptr(), gt.as_ptr(), 6, 2, counts.as_mut_ptr(), &mut oa, ptr::null_mut()) };
    assert_ne!(st, AfnetStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/afnet.h");
    for f in [
        "afnet_last_error",
        "afnet_model_new",
        "afnet_model_load",
        "afnet_model_free",
        "afnet_model_num_classes",
        "afnet_model_uses_aux",
        "afnet_model_predict",
        "afnet_ndvi",
        "afnet_confusion",
        "AFNET_STATUS_PANIC",
    ] {
        assert!(header.contains(f), "{f} missing from the header");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/afnet.h");
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = std::process::Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header]).output() else {
            eprintln!("{cc} not available; skipping");
            continue;
        };
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
