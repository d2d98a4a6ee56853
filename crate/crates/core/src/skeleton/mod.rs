//! Skeleton sequences: data model, file formats, synthetic generation and
//! dataset splitting.

mod jsonl;
mod ntu;
mod split;
mod synth;

pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, to_jsonl};
pub use ntu::{ntu_label_from_name, parse_ntu_skeleton, write_ntu_skeleton, NTU_JOINTS};
pub use split::{split_hash, split_indices, split_target};
pub use synth::{gen_domain, gen_synthetic, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of bodies tracked per frame.
pub const MAX_BODIES: usize = 2;

/// A joint position `(x, y, z)` in meters.
pub type Joint = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// The bodies visible in one frame, each a list of `J` joints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BodyFrame {
    pub bodies: Vec<Vec<Joint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<BodyFrame>,
    pub label: Option<ActionLabel>,
    pub domain: Domain,
    pub subject_id: i64,
    pub view_id: i64,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<BodyFrame>, label: Option<ActionLabel>, domain: Domain) -> Self {
        SkeletonSequence {
            frames,
            label,
            domain,
            subject_id: 0,
            view_id: 0,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Body slots per frame (0 for an empty sequence).
    pub fn body_slots(&self) -> usize {
        self.frames.first().map_or(0, |f| f.bodies.len())
    }

    /// Joints per body (0 for an empty sequence).
    pub fn joints(&self) -> usize {
        self.frames
            .first()
            .and_then(|f| f.bodies.first())
            .map_or(0, Vec::len)
    }

    /// Checks that every frame has the same body and joint counts, at most
    /// [`MAX_BODIES`] bodies, and only finite coordinates.
    pub fn validate(&self) -> Result<()> {
        let slots = self.body_slots();
        let joints = self.joints();
        if slots > MAX_BODIES {
            return Err(Error::Data(format!("{slots} bodies per frame exceeds {MAX_BODIES}")));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.bodies.len() != slots {
                return Err(Error::Data(format!(
                    "frame {t} has {} bodies, expected {slots}",
                    frame.bodies.len()
                )));
            }
            for (b, body) in frame.bodies.iter().enumerate() {
                if body.len() != joints {
                    return Err(Error::Data(format!(
                        "frame {t} body {b} has {} joints, expected {joints}",
                        body.len()
                    )));
                }
                if body.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("frame {t} body {b} has a non-finite coordinate")));
                }
            }
        }
        Ok(())
    }

    /// Copy with the label removed, as handed to adaptation code.
    pub fn without_label(&self) -> Self {
        SkeletonSequence {
            label: None,
            ..self.clone()
        }
    }

    /// Moves every joint by `offset`.
    pub fn translated(&self, offset: Joint) -> Self {
        let mut out = self.clone();
        for joint in out.frames.iter_mut().flat_map(|f| f.bodies.iter_mut()).flatten() {
            for (c, o) in joint.iter_mut().zip(offset) {
                *c += o;
            }
        }
        out
    }
}
