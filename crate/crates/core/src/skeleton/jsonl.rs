//! One-sequence-per-line JSON datasets.
//!
//! `{"label": int|null, "domain": "source"|"target", "subject": int,
//!   "view": int, "frames": [[[x,y,z] × J] × bodies] × T}`

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActionLabel, BodyFrame, Domain, Joint, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default)]
    label: Option<usize>,
    domain: Domain,
    #[serde(default)]
    subject: i64,
    #[serde(default)]
    view: i64,
    frames: Vec<Vec<Vec<Joint>>>,
}

impl From<&SkeletonSequence> for Record {
    fn from(s: &SkeletonSequence) -> Self {
        Record {
            label: s.label.map(|l| l.0),
            domain: s.domain,
            subject: s.subject_id,
            view: s.view_id,
            frames: s.frames.iter().map(|f| f.bodies.clone()).collect(),
        }
    }
}

impl From<Record> for SkeletonSequence {
    fn from(r: Record) -> Self {
        SkeletonSequence {
            frames: r.frames.into_iter().map(|bodies| BodyFrame { bodies }).collect(),
            label: r.label.map(ActionLabel),
            domain: r.domain,
            subject_id: r.subject,
            view_id: r.view,
        }
    }
}

pub fn to_jsonl(seqs: &[SkeletonSequence]) -> Result<String> {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&serde_json::to_string(&Record::from(s))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSONL text. Blank lines are skipped; record indices in errors are
/// zero-based positions among non-blank lines.
pub fn parse_jsonl(text: &str) -> Result<Vec<SkeletonSequence>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            let record: Record = serde_json::from_str(line).map_err(|e| Error::Record {
                index,
                msg: e.to_string(),
            })?;
            let seq = SkeletonSequence::from(record);
            seq.validate().map_err(|e| Error::Record {
                index,
                msg: e.to_string(),
            })?;
            Ok(seq)
        })
        .collect()
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn save_jsonl(seqs: &[SkeletonSequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(seqs)?).map_err(|e| Error::io(path, e))
}
