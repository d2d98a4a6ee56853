//! Reader and writer for the plain-text Kinect `.skeleton` layout.
//!
//! ```text
//! <frame count>
//! per frame:
//!   <body count>
//!   per body:
//!     <10 body info fields>
//!     <joint count>
//!     per joint: x y z <9 more fields>
//! ```
//!
//! Only `x y z` survive parsing. Bodies past the second are dropped and
//! frames with fewer bodies than the busiest frame are zero-filled.

use std::fmt::Write as _;

use super::{BodyFrame, Domain, Joint, SkeletonSequence, MAX_BODIES};
use crate::error::{Error, Result};

/// Joints per body in Kinect V2 captures.
pub const NTU_JOINTS: usize = 25;

const BODY_INFO_FIELDS: usize = 10;
const JOINT_FIELDS: usize = 12;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                Ok((i + 1, line))
            }
            None => Err(Error::Parse {
                line: self.last + 1,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (line, text) = self.next(what)?;
        let mut fields = text.split_whitespace();
        let value = fields.next().ok_or_else(|| Error::Parse {
            line,
            msg: format!("empty line, expected {what}"),
        })?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("expected a single {what}"),
            });
        }
        value.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid {what} `{value}`"),
        })
    }

    fn numbers(&mut self, what: &str, expected: usize) -> Result<(usize, Vec<f64>)> {
        let (line, text) = self.next(what)?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != expected {
            return Err(Error::Parse {
                line,
                msg: format!("{what} needs {expected} fields, found {}", fields.len()),
            });
        }
        let values = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("non-numeric field `{f}` in {what}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((line, values))
    }
}

/// Parses a `.skeleton` file into a sequence. The result is unlabeled and
/// tagged [`Domain::Source`]; callers assign label and domain.
pub fn parse_ntu_skeleton(bytes: &[u8]) -> Result<SkeletonSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            line,
            msg: "invalid UTF-8".into(),
        }
    })?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };

    let frame_count = lines.count("frame count")?;
    let mut joints: Option<usize> = None;
    let mut raw_frames: Vec<Vec<Vec<Joint>>> = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let body_count = lines.count("body count")?;
        let mut bodies = Vec::with_capacity(body_count.min(MAX_BODIES));
        for _ in 0..body_count {
            lines.numbers("body info line", BODY_INFO_FIELDS)?;
            let count_line = lines.last + 1;
            let declared = lines.count("joint count")?;
            match joints {
                None => joints = Some(declared),
                Some(j) if j != declared => {
                    return Err(Error::Parse {
                        line: count_line,
                        msg: format!("joint count {declared} differs from earlier bodies ({j})"),
                    })
                }
                Some(_) => {}
            }
            let mut body = Vec::with_capacity(declared);
            for _ in 0..declared {
                let (line, v) = lines.numbers("joint line", JOINT_FIELDS)?;
                let joint = [v[0], v[1], v[2]];
                if joint.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Parse {
                        line,
                        msg: "non-finite coordinate".into(),
                    });
                }
                body.push(joint);
            }
            if bodies.len() < MAX_BODIES {
                bodies.push(body);
            }
        }
        raw_frames.push(bodies);
    }
    for (i, rest) in lines.inner.by_ref() {
        if !rest.trim().is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "unexpected content after the last frame".into(),
            });
        }
    }

    let joints = joints.unwrap_or(NTU_JOINTS);
    let slots = raw_frames.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let frames = raw_frames
        .into_iter()
        .map(|mut bodies| {
            bodies.resize(slots, vec![[0.0; 3]; joints]);
            BodyFrame { bodies }
        })
        .collect();
    Ok(SkeletonSequence::new(frames, None, Domain::Source))
}

/// Serializes a sequence in the layout read by [`parse_ntu_skeleton`]. All
/// non-coordinate fields are written as zeros.
pub fn write_ntu_skeleton(seq: &SkeletonSequence) -> Vec<u8> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", seq.frames.len());
    for frame in &seq.frames {
        let _ = writeln!(out, "{}", frame.bodies.len());
        for body in &frame.bodies {
            out.push_str("0 0 0 0 0 0 0 0 0 0\n");
            let _ = writeln!(out, "{}", body.len());
            for [x, y, z] in body {
                let _ = writeln!(out, "{x} {y} {z} 0 0 0 0 0 0 0 0 0");
            }
        }
    }
    out.into_bytes()
}

/// Reads the action index from an NTU file name such as
/// `S001C002P003R002A013.skeleton` (action `A013` is class 12).
pub fn ntu_label_from_name(name: &str) -> Option<super::ActionLabel> {
    let stem = name.rsplit('/').next()?;
    let pos = stem.find('A')?;
    let digits: String = stem[pos + 1..].chars().take_while(char::is_ascii_digit).collect();
    let n: usize = digits.parse().ok()?;
    n.checked_sub(1).map(super::ActionLabel)
}
