use std::ffi::{CStr, CString};
use std::ptr;

use skeladapt::checkpoint::Checkpoint;
use skeladapt::encoder::{encode, EncoderConfig};
use skeladapt::model::{Model, ModelConfig};
use skeladapt::skeleton::{gen_synthetic, write_ntu_skeleton, ActionLabel, SynthConfig};
use skeladapt_ffi::*;

fn last_error() -> String {
    let p = sk_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn coords(seq: &skeladapt::skeleton::SkeletonSequence) -> (Vec<f64>, usize, usize, usize) {
    let frames = seq.num_frames();
    let bodies = seq.body_slots();
    let joints = seq.joints();
    let data = seq
        .frames
        .iter()
        .flat_map(|f| f.bodies.iter().flatten().flatten().copied())
        .collect();
    (data, frames, bodies, joints)
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(sk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn schedules() {
    let mut out = f64::NAN;
    unsafe {
        assert_eq!(sk_alpha(0.0, 10.0, &mut out), SkStatus::Ok);
        assert_eq!(out, 0.0);
        assert_eq!(sk_alpha(1.0, 10.0, &mut out), SkStatus::Ok);
        assert!((out - 0.99990920).abs() < 1e-7);
        assert_eq!(sk_learning_rate(0.0, 0.01, 10.0, 0.75, &mut out), SkStatus::Ok);
        assert_eq!(out, 0.01);
        assert_eq!(sk_alpha(1.5, 10.0, &mut out), SkStatus::InvalidArgument);
        assert!(last_error().contains("progress"));
        assert_eq!(sk_learning_rate(0.5, -1.0, 10.0, 0.75, &mut out), SkStatus::InvalidArgument);
        assert_eq!(sk_alpha(0.5, 10.0, ptr::null_mut()), SkStatus::NullPointer);
    }
}

#[test]
fn null_handles_are_rejected() {
    let mut n = 0usize;
    let mut buf = [0.0; 3 * 16];
    unsafe {
        assert_eq!(sk_sequence_num_frames(ptr::null(), &mut n), SkStatus::NullPointer);
        assert_eq!(sk_encode(ptr::null(), 4, 4, 1, buf.as_mut_ptr(), buf.len()), SkStatus::NullPointer);
        assert_eq!(sk_model_load(ptr::null(), ptr::null_mut()), SkStatus::NullPointer);
        sk_sequence_free(ptr::null_mut());
        sk_model_free(ptr::null_mut());
    }
}

#[test]
fn encode_matches_library() {
    let seq = gen_synthetic(&SynthConfig::default(), ActionLabel(2), 0).unwrap();
    let (data, frames, bodies, joints) = coords(&seq);
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(sk_sequence_from_coords(data.as_ptr(), frames, bodies, joints, &mut handle), SkStatus::Ok);
        let mut n = 0;
        assert_eq!(sk_sequence_num_frames(handle, &mut n), SkStatus::Ok);
        assert_eq!(n, 32);

        let mut img = vec![0.0; 3 * 16 * 8];
        assert_eq!(sk_encode(handle, 16, 8, 2, img.as_mut_ptr(), img.len()), SkStatus::Ok);
        let cfg = EncoderConfig {
            out_height: 16,
            out_width: 8,
            ..EncoderConfig::default()
        };
        assert_eq!(img, encode(&seq, &cfg).unwrap().data());
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));

        assert_eq!(sk_encode(handle, 16, 8, 2, img.as_mut_ptr(), 10), SkStatus::InvalidArgument);
        assert!(last_error().contains("need 384"));
        sk_sequence_free(handle);
    }
}

#[test]
fn non_finite_coordinates_rejected() {
    let data = [0.0, f64::NAN, 0.0];
    let mut handle = ptr::null_mut();
    let status = unsafe { sk_sequence_from_coords(data.as_ptr(), 1, 1, 1, &mut handle) };
    assert_eq!(status, SkStatus::Data);
    assert!(handle.is_null());
}

#[test]
fn skeleton_file_parse_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let seq = gen_synthetic(&SynthConfig::default(), ActionLabel(0), 1).unwrap();
    let good = dir.path().join("good.skeleton");
    std::fs::write(&good, write_ntu_skeleton(&seq)).unwrap();
    let bad = dir.path().join("bad.skeleton");
    std::fs::write(&bad, "1\n1\nnot numbers\n").unwrap();

    let mut handle = ptr::null_mut();
    unsafe {
        let p = CString::new(good.to_str().unwrap()).unwrap();
        assert_eq!(sk_sequence_from_skeleton_file(p.as_ptr(), &mut handle), SkStatus::Ok);
        let mut n = 0;
        sk_sequence_num_frames(handle, &mut n);
        assert_eq!(n, seq.num_frames());
        sk_sequence_free(handle);

        let p = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(sk_sequence_from_skeleton_file(p.as_ptr(), &mut handle), SkStatus::Parse);
        assert!(last_error().starts_with("line 3"));

        let p = CString::new(dir.path().join("missing").to_str().unwrap()).unwrap();
        assert_eq!(sk_sequence_from_skeleton_file(p.as_ptr(), &mut handle), SkStatus::Io);
    }
}

#[test]
fn model_predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(ModelConfig::default(), 7).unwrap();
    let encoder = EncoderConfig::default();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_model(&model, encoder, None).save(&path).unwrap();

    let seq = gen_synthetic(&SynthConfig::default(), ActionLabel(4), 3).unwrap();
    let img = encode(&seq, &encoder).unwrap();
    let batch = img.to_tensor().reshape(vec![1, 3, 32, 32]).unwrap();
    let expected = model.predict(&batch).unwrap()[0];
    let (data, frames, bodies, joints) = coords(&seq);

    unsafe {
        let mut m = ptr::null_mut();
        let p = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(sk_model_load(p.as_ptr(), &mut m), SkStatus::Ok);
        let mut k = 0;
        assert_eq!(sk_model_num_classes(m, &mut k), SkStatus::Ok);
        assert_eq!(k, 10);

        let mut s = ptr::null_mut();
        sk_sequence_from_coords(data.as_ptr(), frames, bodies, joints, &mut s);
        let mut label = usize::MAX;
        let mut scores = vec![0.0; k];
        assert_eq!(sk_model_predict(m, s, &mut label, scores.as_mut_ptr(), k), SkStatus::Ok);
        assert_eq!(label, expected.0);
        assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = (0..k).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(argmax, label);

        assert_eq!(sk_model_predict(m, s, &mut label, scores.as_mut_ptr(), 3), SkStatus::InvalidArgument);
        assert_eq!(sk_model_predict(m, s, &mut label, ptr::null_mut(), 0), SkStatus::Ok);
        sk_sequence_free(s);
        sk_model_free(m);
    }
}

#[test]
fn corrupt_checkpoint_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, "{not json").unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sk_model_load(p.as_ptr(), &mut m) }, SkStatus::Parse);
    assert!(m.is_null());
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/skeladapt.h")).unwrap();
    for name in [
        "sk_version",
        "sk_last_error",
        "sk_sequence_from_skeleton_file",
        "sk_sequence_from_coords",
        "sk_sequence_free",
        "sk_sequence_num_frames",
        "sk_encode",
        "sk_model_load",
        "sk_model_free",
        "sk_model_num_classes",
        "sk_model_predict",
        "sk_alpha",
        "sk_learning_rate",
        "typedef struct SkModel SkModel",
        "SK_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/skeladapt.h");
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status();
    match status {
        Ok(s) => assert!(s.success(), "cc rejected the header"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
