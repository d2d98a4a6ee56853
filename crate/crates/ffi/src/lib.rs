//! C ABI for loading checkpoints, encoding skeleton sequences and running
//! inference.
//!
//! Every function returns an [`SkStatus`]; on failure the message is kept
//! per thread and read with [`sk_last_error`]. Handles are opaque and must
//! be released with their `_free` function. Panics never cross the
//! boundary; they surface as [`SkStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use skeladapt::checkpoint::Checkpoint;
use skeladapt::encoder::{encode, EncoderConfig};
use skeladapt::model::Model;
use skeladapt::objectives::AlphaSchedule;
use skeladapt::optim::SgdConfig;
use skeladapt::skeleton::{parse_ntu_skeleton, BodyFrame, Domain, SkeletonSequence};
use skeladapt::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Data = 4,
    Io = 5,
    Internal = 6,
    Panic = 7,
}

/// A loaded model together with the encoder settings it was trained with.
pub struct SkModel {
    model: Model,
    encoder: EncoderConfig,
}

/// One skeleton sequence.
pub struct SkSequence {
    seq: SkeletonSequence,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn status_of(e: &Error) -> SkStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) => SkStatus::Parse,
        Error::Record { .. } | Error::Data(_) => SkStatus::Data,
        Error::Config(_) => SkStatus::InvalidArgument,
        Error::Io { .. } => SkStatus::Io,
        _ => SkStatus::Internal,
    }
}

struct Failure(SkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SkStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SkStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status and recording the
/// message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SkStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SkStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn sk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses an NTU `.skeleton` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_sequence_from_skeleton_file(path: *const c_char, out: *mut *mut SkSequence) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let bytes = std::fs::read(&path).map_err(|e| Failure(SkStatus::Io, format!("{path}: {e}")))?;
        let seq = parse_ntu_skeleton(&bytes)?;
        *out = Box::into_raw(Box::new(SkSequence { seq }));
        Ok(())
    })
}

/// Builds a sequence from `frames × bodies × joints × 3` coordinates in
/// row-major order.
///
/// # Safety
/// `xyz` must point to `frames * bodies * joints * 3` doubles and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_sequence_from_coords(
    xyz: *const f64,
    frames: usize,
    bodies: usize,
    joints: usize,
    out: *mut *mut SkSequence,
) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = frames
            .checked_mul(bodies)
            .and_then(|v| v.checked_mul(joints))
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| invalid("coordinate count overflows"))?;
        if n > 0 && xyz.is_null() {
            return Err(null("xyz"));
        }
        let data = if n == 0 { &[][..] } else { std::slice::from_raw_parts(xyz, n) };
        let per_body = joints * 3;
        let frames = (0..frames)
            .map(|t| BodyFrame {
                bodies: (0..bodies)
                    .map(|b| {
                        let start = (t * bodies + b) * per_body;
                        data[start..start + per_body]
                            .chunks_exact(3)
                            .map(|c| [c[0], c[1], c[2]])
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let seq = SkeletonSequence::new(frames, None, Domain::Target);
        seq.validate()?;
        *out = Box::into_raw(Box::new(SkSequence { seq }));
        Ok(())
    })
}

/// # Safety
/// `seq` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sk_sequence_free(seq: *mut SkSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// # Safety
/// `seq` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_sequence_num_frames(seq: *const SkSequence, out: *mut usize) -> SkStatus {
    guard(|| {
        let seq = seq.as_ref().ok_or_else(|| null("seq"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = seq.seq.num_frames();
        Ok(())
    })
}

/// Encodes `seq` into a `3 × out_height × out_width` image, channel-major,
/// written to `out` which must hold `out_len >= 3·out_height·out_width`
/// doubles.
///
/// # Safety
/// `seq` must be a valid handle and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_encode(
    seq: *const SkSequence,
    out_height: usize,
    out_width: usize,
    body_slots: usize,
    out: *mut f64,
    out_len: usize,
) -> SkStatus {
    guard(|| {
        let seq = seq.as_ref().ok_or_else(|| null("seq"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = EncoderConfig {
            out_height,
            out_width,
            body_slots,
            ..EncoderConfig::default()
        };
        cfg.validate()?;
        let need = 3 * out_height * out_width;
        if out_len < need {
            return Err(invalid(format!("output buffer holds {out_len} values, need {need}")));
        }
        let img = encode(&seq.seq, &cfg)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(img.data());
        Ok(())
    })
}

/// Loads a checkpoint written by `skeladapt train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_model_load(path: *const c_char, out: *mut *mut SkModel) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let ckpt = Checkpoint::load(&path)?;
        let model = ckpt.to_model()?;
        *out = Box::into_raw(Box::new(SkModel {
            model,
            encoder: ckpt.encoder,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sk_model_free(model: *mut SkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_model_num_classes(model: *const SkModel, out: *mut usize) -> SkStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = model.model.config.num_classes;
        Ok(())
    })
}

/// Predicts the action class of `seq`. When `scores` is non-null it
/// receives `K` per-class scores `q_k + q_{K+k}` from the joint softmax;
/// `scores_len` must then be at least `K`.
///
/// # Safety
/// Handles must be valid, `label` a valid pointer, and `scores` null or
/// pointing to `scores_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_model_predict(
    model: *const SkModel,
    seq: *const SkSequence,
    label: *mut usize,
    scores: *mut f64,
    scores_len: usize,
) -> SkStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let seq = seq.as_ref().ok_or_else(|| null("seq"))?;
        if label.is_null() {
            return Err(null("label"));
        }
        let k = model.model.config.num_classes;
        if !scores.is_null() && scores_len < k {
            return Err(invalid(format!("scores buffer holds {scores_len} values, need {k}")));
        }
        let img = encode(&seq.seq, &model.encoder)?;
        let batch = img.to_tensor().reshape(vec![1, 3, img.height(), img.width()])?;
        let feats = model.model.extract_features(&batch)?;
        let dist = model
            .model
            .head_forward(&feats)?
            .pop()
            .ok_or_else(|| Failure(SkStatus::Internal, "empty head output".into()))?;
        *label = skeladapt::model::predict(&dist).0;
        if !scores.is_null() {
            let s = std::slice::from_raw_parts_mut(scores, k);
            for (c, v) in s.iter_mut().enumerate() {
                *v = dist.joint[c] + dist.joint[k + c];
            }
        }
        Ok(())
    })
}

/// Adversarial weight `2/(1+exp(−γp)) − 1`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_alpha(progress: f64, gamma: f64, out: *mut f64) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&progress) || !gamma.is_finite() {
            return Err(invalid(format!("progress must be in [0,1], got {progress}")));
        }
        *out = AlphaSchedule { gamma }.alpha(progress);
        Ok(())
    })
}

/// Annealed learning rate `base_lr / (1 + a·p)^b`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_learning_rate(progress: f64, base_lr: f64, a: f64, b: f64, out: *mut f64) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&progress) {
            return Err(invalid(format!("progress must be in [0,1], got {progress}")));
        }
        let cfg = SgdConfig {
            base_lr,
            anneal_a: a,
            anneal_b: b,
            ..SgdConfig::default()
        };
        cfg.validate()?;
        *out = cfg.learning_rate(progress);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_are_contained() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, SkStatus::Panic);
        let msg = unsafe { CStr::from_ptr(sk_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn success_clears_last_error() {
        set_error("stale");
        assert_eq!(guard(|| Ok(())), SkStatus::Ok);
        assert!(sk_last_error().is_null());
    }
}
