//! Skeleton-image encoding.
//!
//! A sequence becomes a 3-channel raster: channel `c` carries coordinate
//! axis `c` (X, Y, Z), row `b·J + j` is joint `j` of body slot `b`, and
//! column `t` is frame `t`. Each channel is min-max normalized over the
//! bodies present in the sequence, missing body slots stay zero, and the
//! raster is finally resized to the network input size.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonSequence, MAX_BODIES};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    PerSequenceMinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub out_height: usize,
    pub out_width: usize,
    pub body_slots: usize,
    pub normalization: Normalization,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            out_height: 32,
            out_width: 32,
            body_slots: 2,
            normalization: Normalization::PerSequenceMinMax,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_height < 4 || self.out_width < 4 {
            return Err(Error::Config(format!(
                "encoder output must be at least 4x4, got {}x{}",
                self.out_height, self.out_width
            )));
        }
        if !(1..=MAX_BODIES).contains(&self.body_slots) {
            return Err(Error::Config(format!(
                "body_slots must be in 1..={MAX_BODIES}, got {}",
                self.body_slots
            )));
        }
        Ok(())
    }
}

/// A channel-major `3 × height × width` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SkeletonImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != CHANNELS * height * width {
            return Err(Error::shape(
                "skeleton image",
                format!("{} values for 3x{height}x{width}", data.len()),
            ));
        }
        Ok(SkeletonImage {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![CHANNELS, self.height, self.width], self.data.clone()).expect("image shape")
    }

    /// Binary PPM (P6), values scaled by 255 and rounded.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        let n = self.height * self.width;
        for i in 0..n {
            for c in 0..CHANNELS {
                out.push(to_byte(self.data[c * n + i]));
            }
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Builds the normalized `(J·body_slots) × T` raster before resizing.
pub fn raw_raster(seq: &SkeletonSequence, body_slots: usize) -> Result<SkeletonImage> {
    if seq.is_empty() {
        return Err(Error::Data("cannot encode an empty sequence".into()));
    }
    seq.validate()?;
    let joints = seq.joints();
    if joints == 0 {
        return Err(Error::Data("sequence has no joints".into()));
    }
    let present = seq.body_slots().min(body_slots);
    let (h, w) = (joints * body_slots, seq.num_frames());

    let mut lo = [f64::INFINITY; CHANNELS];
    let mut hi = [f64::NEG_INFINITY; CHANNELS];
    for frame in &seq.frames {
        for joint in frame.bodies[..present].iter().flatten() {
            for c in 0..CHANNELS {
                lo[c] = lo[c].min(joint[c]);
                hi[c] = hi[c].max(joint[c]);
            }
        }
    }

    let mut data = vec![0.0; CHANNELS * h * w];
    for (t, frame) in seq.frames.iter().enumerate() {
        for (b, body) in frame.bodies[..present].iter().enumerate() {
            for (j, joint) in body.iter().enumerate() {
                let row = b * joints + j;
                for c in 0..CHANNELS {
                    let range = hi[c] - lo[c];
                    data[(c * h + row) * w + t] = if range > 0.0 {
                        ((joint[c] - lo[c]) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    SkeletonImage::new(h, w, data)
}

/// Corner-aligned separable bilinear resize: output corners sample input
/// corners exactly.
pub fn resize_bilinear(img: &SkeletonImage, out_h: usize, out_w: usize) -> Result<SkeletonImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize", "output extent must be positive"));
    }
    let (h, w) = (img.height, img.width);
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut tmp = vec![0.0; h * out_w];
    let mut out = vec![0.0; CHANNELS * out_h * out_w];
    for c in 0..CHANNELS {
        let src = img.channel(c);
        for y in 0..h {
            for (x, &(i0, i1, f)) in cols.iter().enumerate() {
                tmp[y * out_w + x] = lerp(src[y * w + i0], src[y * w + i1], f);
            }
        }
        let dst = &mut out[c * out_h * out_w..(c + 1) * out_h * out_w];
        for (y, &(i0, i1, f)) in rows.iter().enumerate() {
            for x in 0..out_w {
                dst[y * out_w + x] = lerp(tmp[i0 * out_w + x], tmp[i1 * out_w + x], f).clamp(0.0, 1.0);
            }
        }
    }
    SkeletonImage::new(out_h, out_w, out)
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + (b - a) * f
}

fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 || src == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub fn encode(seq: &SkeletonSequence, cfg: &EncoderConfig) -> Result<SkeletonImage> {
    cfg.validate()?;
    let raw = raw_raster(seq, cfg.body_slots)?;
    resize_bilinear(&raw, cfg.out_height, cfg.out_width)
}

/// Encodes every sequence into a `[N, 3, out_height, out_width]` tensor.
pub fn encode_batch(seqs: &[SkeletonSequence], cfg: &EncoderConfig) -> Result<Tensor> {
    if seqs.is_empty() {
        return Err(Error::Data("cannot encode an empty batch".into()));
    }
    let mut data = Vec::with_capacity(seqs.len() * CHANNELS * cfg.out_height * cfg.out_width);
    for s in seqs {
        data.extend_from_slice(encode(s, cfg)?.data());
    }
    Tensor::new(vec![seqs.len(), CHANNELS, cfg.out_height, cfg.out_width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{BodyFrame, Domain, NTU_JOINTS};

    fn seq(frames: usize, bodies: usize, joints: usize) -> SkeletonSequence {
        let frames = (0..frames)
            .map(|t| BodyFrame {
                bodies: (0..bodies)
                    .map(|b| {
                        (0..joints)
                            .map(|j| {
                                let x = (t * 7 + j * 3 + b) as f64;
                                [x.sin(), (x * 0.3).cos(), 0.01 * x]
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        SkeletonSequence::new(frames, None, Domain::Source)
    }

    #[test]
    fn raw_shape_for_two_bodies() {
        let r = raw_raster(&seq(60, 2, NTU_JOINTS), 2).unwrap();
        assert_eq!((r.height(), r.width()), (50, 60));
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut s = seq(5, 1, 4);
        for j in s.frames.iter_mut().flat_map(|f| f.bodies[0].iter_mut()) {
            j[0] = 2.5;
        }
        let r = raw_raster(&s, 1).unwrap();
        assert!(r.channel(0).iter().all(|&v| v == 0.0));
        assert!(r.channel(1).iter().any(|&v| v > 0.0));
    }

    #[test]
    fn missing_slot_is_zero_rows() {
        let r = raw_raster(&seq(6, 1, 5), 2).unwrap();
        for c in 0..CHANNELS {
            for row in 5..10 {
                for col in 0..6 {
                    assert_eq!(r.get(c, row, col), 0.0);
                }
            }
        }
    }

    #[test]
    fn output_size_and_range() {
        let img = encode(&seq(17, 2, 9), &EncoderConfig::default()).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32));
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(encode(&seq(0, 1, 4), &EncoderConfig::default()).is_err());
    }

    #[test]
    fn resize_closed_form_row() {
        let img = SkeletonImage::new(1, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&img, 1, 4).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for c in 0..CHANNELS {
            for (x, w) in want.iter().enumerate() {
                assert!((r.get(c, 0, x) - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let raw = raw_raster(&seq(9, 1, 7), 1).unwrap();
        let same = resize_bilinear(&raw, 7, 9).unwrap();
        assert_eq!(same, raw);

        let c = SkeletonImage::new(3, 5, vec![0.4; 45]).unwrap();
        let r = resize_bilinear(&c, 8, 2).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn ppm_header_and_size() {
        let img = SkeletonImage::new(2, 3, vec![1.0; 18]).unwrap();
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm.len(), b"P6\n3 2\n255\n".len() + 18);
        assert!(ppm.ends_with(&[255, 255, 255]));
    }

    #[test]
    fn batch_matches_single() {
        let cfg = EncoderConfig::default();
        let seqs = vec![seq(10, 1, 6), seq(12, 2, 6)];
        let b = encode_batch(&seqs, &cfg).unwrap();
        assert_eq!(b.shape(), &[2, 3, 32, 32]);
        assert_eq!(b.slice_outer(1, 2).data(), encode(&seqs[1], &cfg).unwrap().data());
    }
}
