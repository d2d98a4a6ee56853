//! Parametric synthetic skeleton motions with controllable view and subject
//! shift.
//!
//! Every class assigns each joint a sinusoidal trajectory around a shared
//! stick-figure rest pose. Frequency, phase and displacement direction are
//! drawn from an RNG keyed by `(seed, class, joint)`, so classes differ while
//! living on one pose manifold. A domain is then applied on top: rotation
//! about the vertical axis, uniform body scale, playback speed and sensor
//! noise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActionLabel, BodyFrame, Domain, Joint, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub joints: usize,
    pub frames: usize,
    /// Camera yaw in radians (rotation about the vertical axis).
    pub view_angle: f64,
    pub subject_scale: f64,
    pub subject_speed: f64,
    pub noise_sigma: f64,
    /// Peak joint displacement in meters.
    pub amplitude: f64,
    /// Relative per-instance variation of amplitude and phase.
    pub instance_jitter: f64,
    /// When set, class `c` draws its joint frequencies from a band centered
    /// on `0.75 + 4·c/(K−1)` cycles per sequence with this relative
    /// half-width. Unset: every joint draws uniformly from 0.5 to 3 cycles.
    pub frequency_band: Option<f64>,
    /// When true, each joint moves along one direction shared by every
    /// class, so classes differ only in timing. When false, every class
    /// draws its own directions.
    pub shared_directions: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 10,
            joints: 15,
            frames: 32,
            view_angle: 0.0,
            subject_scale: 1.0,
            subject_speed: 1.0,
            noise_sigma: 0.01,
            amplitude: 0.12,
            instance_jitter: 0.2,
            frequency_band: None,
            shared_directions: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.joints < 4 {
            return Err(Error::Config(format!("joints must be >= 4, got {}", self.joints)));
        }
        if self.frames < 8 {
            return Err(Error::Config(format!("frames must be >= 8, got {}", self.frames)));
        }
        if !(self.subject_scale > 0.0 && self.subject_speed > 0.0) {
            return Err(Error::Config("subject_scale and subject_speed must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.amplitude >= 0.0 && self.instance_jitter >= 0.0) {
            return Err(Error::Config("noise_sigma, amplitude and instance_jitter must be >= 0".into()));
        }
        if let Some(w) = self.frequency_band {
            if !(0.0..1.0).contains(&w) {
                return Err(Error::Config(format!("frequency_band must be in [0,1), got {w}")));
            }
        }
        if !self.view_angle.is_finite() {
            return Err(Error::Config("view_angle must be finite".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent RNG seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| mix(acc ^ mix(p)))
}

/// Rest position of joint `j`: five limbs (spine, two arms, two legs) grown
/// outward from the pelvis at the origin.
fn rest_pose(j: usize) -> Joint {
    const BONE: f64 = 0.15;
    let limb = j % 5;
    let depth = (j / 5 + 1) as f64;
    let (anchor, dir): (Joint, Joint) = match limb {
        0 => ([0.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        1 => ([0.0, 0.45, 0.0], [-0.95, 0.3, 0.0]),
        2 => ([0.0, 0.45, 0.0], [0.95, 0.3, 0.0]),
        3 => ([-0.1, 0.0, 0.0], [-0.3, -0.95, 0.0]),
        _ => ([0.1, 0.0, 0.0], [0.3, -0.95, 0.0]),
    };
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    [
        anchor[0] + BONE * depth * dir[0] / norm,
        anchor[1] + BONE * depth * dir[1] / norm,
        anchor[2] + BONE * depth * dir[2] / norm,
    ]
}

const BAND_LOW: f64 = 0.75;
const BAND_SPAN: f64 = 4.0;
/// Key component for per-joint draws that ignore the class.
const SHARED_DIRECTIONS: u64 = 0xD1;

struct JointMotion {
    cycles: f64,
    phase: f64,
    direction: Joint,
}

fn class_motion(cfg: &SynthConfig, class: usize) -> Vec<JointMotion> {
    (0..cfg.joints)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(key(&[cfg.seed, class as u64, j as u64]));
            let cycles = match cfg.frequency_band {
                Some(width) => {
                    let center = BAND_LOW + BAND_SPAN * class as f64 / (cfg.num_classes - 1) as f64;
                    center * (1.0 + width * rng.gen_range(-1.0..1.0))
                }
                None => rng.gen_range(0.5..3.0),
            };
            let phase = rng.gen_range(0.0..TAU);
            if cfg.shared_directions {
                rng = ChaCha8Rng::seed_from_u64(key(&[cfg.seed, SHARED_DIRECTIONS, j as u64]));
            }
            let mut direction: Joint = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            direction.iter_mut().for_each(|v| *v /= n);
            JointMotion {
                cycles,
                phase,
                direction,
            }
        })
        .collect()
}

/// Generates one single-body sequence of `class`. Output is a pure function
/// of `(cfg, class, instance)`.
pub fn gen_synthetic(cfg: &SynthConfig, class: ActionLabel, instance: u64) -> Result<SkeletonSequence> {
    cfg.validate()?;
    if class.0 >= cfg.num_classes {
        return Err(Error::Data(format!(
            "class {} out of range for {} classes",
            class.0, cfg.num_classes
        )));
    }
    let motion = class_motion(cfg, class.0);
    let mut rng = ChaCha8Rng::seed_from_u64(key(&[cfg.seed, class.0 as u64, instance, 0x1A57]));
    let jitter = cfg.instance_jitter;
    let amp = cfg.amplitude * (1.0 + jitter * rng.gen_range(-1.0..1.0));
    let phase_shift = jitter * TAU * rng.gen_range(-0.5..0.5);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");

    let (sin_a, cos_a) = cfg.view_angle.sin_cos();
    let t_len = cfg.frames as f64;
    let frames = (0..cfg.frames)
        .map(|t| {
            let time = t as f64 * cfg.subject_speed;
            let body = motion
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let rest = rest_pose(j);
                    let s = (TAU * m.cycles * time / t_len + m.phase + phase_shift).sin();
                    let p: Joint = std::array::from_fn(|c| rest[c] + amp * m.direction[c] * s);
                    let rotated = [cos_a * p[0] + sin_a * p[2], p[1], -sin_a * p[0] + cos_a * p[2]];
                    std::array::from_fn(|c| {
                        let v = cfg.subject_scale * rotated[c];
                        if cfg.noise_sigma > 0.0 {
                            v + noise.sample(&mut rng)
                        } else {
                            v
                        }
                    })
                })
                .collect();
            BodyFrame { bodies: vec![body] }
        })
        .collect();
    Ok(SkeletonSequence::new(frames, Some(class), Domain::Source))
}

/// `instances_per_class` sequences of every class, class-major, tagged with
/// `domain`. Instance indices start at `first_instance`, so two domains drawn
/// from disjoint index ranges never share jitter or noise draws.
pub fn gen_domain(
    cfg: &SynthConfig,
    instances_per_class: usize,
    domain: Domain,
    first_instance: u64,
) -> Result<Vec<SkeletonSequence>> {
    if instances_per_class == 0 {
        return Err(Error::Config("instances_per_class must be positive".into()));
    }
    let mut out = Vec::with_capacity(cfg.num_classes * instances_per_class);
    for class in 0..cfg.num_classes {
        for i in 0..instances_per_class {
            let mut seq = gen_synthetic(cfg, ActionLabel(class), first_instance + i as u64)?;
            seq.domain = domain;
            out.push(seq);
        }
    }
    Ok(out)
}
