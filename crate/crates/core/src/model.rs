//! Convolutional feature extractor and the shared-neuron classifier head.
//!
//! The head has `2K` output neurons. Neurons `[0, K)` form the source task
//! classifier, `[K, 2K)` the target task classifier, and the domain
//! classifier is the full `2K`-way layer: the probability mass in each half
//! of the joint softmax is the source/target probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_row, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::skeleton::ActionLabel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of each 3×3 conv → relu → maxpool stage.
    pub stages: Vec<usize>,
    pub in_channels: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: vec![8, 16, 32],
            in_channels: 3,
            num_classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.contains(&0) {
            return Err(Error::Config(format!("invalid conv stages {:?}", self.stages)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.stages.last().expect("validated")
    }

    /// Trainable scalar count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let mut c_in = self.in_channels;
        let mut total = 0;
        for &c_out in &self.stages {
            total += c_out * c_in * 9 + c_out;
            c_in = c_out;
        }
        total + self.feature_dim() * 2 * self.num_classes + 2 * self.num_classes
    }

    /// Smallest spatial unit the pooling pyramid accepts.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.stages.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub kernel: Param,
    pub bias: Param,
}

/// Stacked 3×3 conv (stride 1, pad 1) → relu → 2×2 maxpool stages followed
/// by global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub stages: Vec<ConvStage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: Param,
    pub bias: Param,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
}

/// He-uniform kernel with each filter's mean removed and its variance
/// restored, so filters start out blind to flat image regions.
fn zero_mean_kernel(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize) -> Tensor {
    let fan_in = c_in * 9;
    let mut k = uniform(rng, &[c_out, c_in, 3, 3], (6.0 / fan_in as f64).sqrt());
    let target = 2.0 / fan_in as f64;
    for filter in k.data_mut().chunks_exact_mut(fan_in) {
        let mean = filter.iter().sum::<f64>() / fan_in as f64;
        filter.iter_mut().for_each(|v| *v -= mean);
        let var = filter.iter().map(|v| v * v).sum::<f64>() / fan_in as f64;
        if var > 0.0 {
            let s = (target / var).sqrt();
            filter.iter_mut().for_each(|v| *v *= s);
        }
    }
    k
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

impl Model {
    /// Seeded init: conv kernels uniform in `±√(6/fan_in)` (He) with each
    /// filter shifted to zero mean, head weights uniform in `±1/√D`, zero
    /// biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = config.in_channels;
        let mut stages = Vec::with_capacity(config.stages.len());
        for (i, &c_out) in config.stages.iter().enumerate() {
            stages.push(ConvStage {
                kernel: Param::new(format!("conv{i}.kernel"), zero_mean_kernel(&mut rng, c_out, c_in)),
                bias: Param::new(format!("conv{i}.bias"), Tensor::zeros(&[c_out])),
            });
            c_in = c_out;
        }
        let d = config.feature_dim();
        let k = config.num_classes;
        let head = ClassifierHead {
            weights: Param::new("head.weights", uniform(&mut rng, &[d, 2 * k], 1.0 / (d as f64).sqrt())),
            bias: Param::new("head.bias", Tensor::zeros(&[2 * k])),
            num_classes: k,
        };
        Ok(Model {
            config,
            extractor: FeatureExtractor { stages },
            head,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.extractor.params();
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.extractor.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Data-dependent initialization from a sample batch. Each conv stage
    /// is rescaled so every output channel's pre-activation has zero mean
    /// and unit variance over the batch; the last stage is then scaled so
    /// the pooled features have unit root-mean-square. Relu and max pooling
    /// commute with positive scaling, so that step is exact. Bounding the
    /// raw feature magnitude, rather than its spread, keeps the head's
    /// effective step size independent of the features' common offset.
    /// Finally the head bias is set so every logit has zero mean over the
    /// batch.
    pub fn calibrate(&mut self, images: &Tensor) -> Result<()> {
        const MIN_STD: f64 = 1e-8;
        let mut x = images.clone();
        for stage in &mut self.extractor.stages {
            let pre = conv_stage_pre(&x, stage)?;
            let [n, c, h, w] = pre.shape()[..] else { unreachable!("conv output is 4-D") };
            let per = (n * h * w) as f64;
            let fan = stage.kernel.value.numel() / c;
            for ch in 0..c {
                let vals = (0..n).flat_map(|i| pre.data()[(i * c + ch) * h * w..(i * c + ch + 1) * h * w].iter());
                let (sum, sq) = vals.fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v));
                let mean = sum / per;
                let std = (sq / per - mean * mean).max(0.0).sqrt();
                if std < MIN_STD {
                    continue;
                }
                stage.kernel.value.data_mut()[ch * fan..(ch + 1) * fan]
                    .iter_mut()
                    .for_each(|k| *k /= std);
                let b = &mut stage.bias.value.data_mut()[ch];
                *b = (*b - mean) / std;
            }
            let mut tape = Tape::new();
            let pre = tape.constant(conv_stage_pre(&x, stage)?);
            let act = tape.relu(pre);
            let pooled = tape.maxpool2(act)?;
            x = tape.value(pooled).clone();
        }
        let feats = self.extract_features(images)?;
        let (n, d) = (feats.shape()[0], feats.shape()[1]);
        let rms = (feats.data().iter().map(|v| v * v).sum::<f64>() / (n * d) as f64).sqrt();
        if rms > MIN_STD {
            let last = self.extractor.stages.last_mut().expect("validated");
            last.kernel.value.data_mut().iter_mut().for_each(|k| *k /= rms);
            last.bias.value.data_mut().iter_mut().for_each(|b| *b /= rms);
        }
        let feats = self.extract_features(images)?;
        let outputs = 2 * self.head.num_classes;
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| feats.data()[i * d + j]).sum::<f64>() / n as f64)
            .collect();
        let w = self.head.weights.value.data();
        let bias: Vec<f64> = (0..outputs)
            .map(|k| -(0..d).map(|j| mean[j] * w[j * outputs + k]).sum::<f64>())
            .collect();
        self.head.bias.value.data_mut().copy_from_slice(&bias);
        Ok(())
    }

    /// Features `[N, D]` for a `[N, C, H, W]` image batch, without gradients.
    pub fn extract_features(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (f, _) = self.extractor.forward(&mut tape, x, false)?;
        Ok(tape.value(f).clone())
    }

    pub fn head_forward(&self, features: &Tensor) -> Result<Vec<HeadDistribution>> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let vars = self.head.bind(&mut tape, false);
        let logits = self.head.logits_with(&mut tape, f, &vars)?;
        let k = self.head.num_classes;
        Ok(tape
            .value(logits)
            .data()
            .chunks_exact(2 * k)
            .map(|row| HeadDistribution::from_logits(row, k))
            .collect())
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<ActionLabel>> {
        let feats = self.extract_features(images)?;
        Ok(self.head_forward(&feats)?.iter().map(predict).collect())
    }
}

fn conv_stage_pre(x: &Tensor, stage: &ConvStage) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let k = tape.constant(stage.kernel.value.clone());
    let b = tape.constant(stage.bias.value.clone());
    let y = tape.conv2d(xv, k, b, 1, 1)?;
    Ok(tape.value(y).clone())
}

fn bind(tape: &mut Tape, params: &[&Param], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| tape.leaf(p.value.clone(), trainable))
        .collect()
}

impl FeatureExtractor {
    pub fn params(&self) -> Vec<&Param> {
        self.stages.iter().flat_map(|s| [&s.kernel, &s.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stages
            .iter_mut()
            .flat_map(|s| [&mut s.kernel, &mut s.bias])
            .collect()
    }

    /// Records the parameters as tape leaves, in [`Self::params`] order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        bind(tape, &self.params(), trainable)
    }

    /// Records the forward pass with parameters already bound by
    /// [`Self::bind`], returning the `[N, D]` feature node.
    pub fn forward_with(&self, tape: &mut Tape, images: Var, vars: &[Var]) -> Result<Var> {
        let shape = tape.value(images).shape().to_vec();
        let [_, _, h, w] = shape[..] else {
            return Err(Error::shape("extract_features", format!("need [N,C,H,W], got {shape:?}")));
        };
        let unit = 1 << self.stages.len();
        if h % unit != 0 || w % unit != 0 {
            return Err(Error::shape(
                "extract_features",
                format!("spatial size {h}x{w} not divisible by {unit}"),
            ));
        }
        let mut x = images;
        for pair in vars.chunks_exact(2) {
            x = tape.conv2d(x, pair[0], pair[1], 1, 1)?;
            x = tape.relu(x);
            x = tape.maxpool2(x)?;
        }
        tape.global_avg_pool(x)
    }

    pub fn forward(&self, tape: &mut Tape, images: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let vars = self.bind(tape, trainable);
        Ok((self.forward_with(tape, images, &vars)?, vars))
    }
}

/// Tape handles for the head outputs of one batch.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub logits: Var,
    /// Softmax over all `2K` logits.
    pub joint: Var,
    /// Softmax over logits `[0, K)`.
    pub src_half: Var,
    /// Softmax over logits `[K, 2K)`.
    pub tgt_half: Var,
    pub num_classes: usize,
}

impl HeadVars {
    /// Derives the three distributions from a `[N, 2K]` logit node.
    pub fn from_logits(tape: &mut Tape, logits: Var, num_classes: usize) -> Result<Self> {
        let k = num_classes;
        let joint = tape.softmax(logits)?;
        let s = tape.slice_cols(logits, 0, k)?;
        let src_half = tape.softmax(s)?;
        let t = tape.slice_cols(logits, k, 2 * k)?;
        let tgt_half = tape.softmax(t)?;
        Ok(HeadVars {
            logits,
            joint,
            src_half,
            tgt_half,
            num_classes: k,
        })
    }

    /// Records explicit distributions as constants (no logits behind them).
    pub fn from_distributions(tape: &mut Tape, dists: &[HeadDistribution]) -> Result<Self> {
        let k = dists
            .first()
            .ok_or_else(|| Error::Data("no distributions".into()))?
            .num_classes();
        let n = dists.len();
        let collect = |f: &dyn Fn(&HeadDistribution) -> &[f64], width: usize| {
            let data: Vec<f64> = dists.iter().flat_map(|d| f(d).iter().copied()).collect();
            Tensor::new(vec![n, width], data)
        };
        let joint = tape.constant(collect(&|d| &d.joint, 2 * k)?);
        let src_half = tape.constant(collect(&|d| &d.src_half, k)?);
        let tgt_half = tape.constant(collect(&|d| &d.tgt_half, k)?);
        Ok(HeadVars {
            logits: joint,
            joint,
            src_half,
            tgt_half,
            num_classes: k,
        })
    }
}

impl ClassifierHead {
    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        bind(tape, &self.params(), trainable)
    }

    /// `[N, 2K]` logits for `[N, D]` features using parameters bound by
    /// [`Self::bind`].
    pub fn logits_with(&self, tape: &mut Tape, features: Var, vars: &[Var]) -> Result<Var> {
        let d = self.weights.value.shape()[0];
        let fs = tape.value(features).shape();
        if fs.len() != 2 || fs[1] != d {
            return Err(Error::shape(
                "head_forward",
                format!("features {fs:?} for a head expecting dimension {d}"),
            ));
        }
        tape.dense(features, vars[0], vars[1])
    }

    pub fn forward_with(&self, tape: &mut Tape, features: Var, vars: &[Var]) -> Result<HeadVars> {
        let logits = self.logits_with(tape, features, vars)?;
        HeadVars::from_logits(tape, logits, self.num_classes)
    }

    /// Zeroes the target-half weights and biases so that half emits
    /// constant zero logits.
    pub fn zero_target_half(&mut self) {
        let k = self.num_classes;
        for row in self.weights.value.data_mut().chunks_exact_mut(2 * k) {
            row[k..].fill(0.0);
        }
        self.bias.value.data_mut()[k..].fill(0.0);
    }
}

/// Per-sample head output.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDistribution {
    pub joint: Vec<f64>,
    pub src_half: Vec<f64>,
    pub tgt_half: Vec<f64>,
}

impl HeadDistribution {
    pub fn from_logits(logits: &[f64], num_classes: usize) -> Self {
        let k = num_classes;
        HeadDistribution {
            joint: softmax_row(logits),
            src_half: softmax_row(&logits[..k]),
            tgt_half: softmax_row(&logits[k..2 * k]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.src_half.len()
    }

    /// Joint probability mass on the source half.
    pub fn source_mass(&self) -> f64 {
        self.joint[..self.num_classes()].iter().sum()
    }

    pub fn target_mass(&self) -> f64 {
        self.joint[self.num_classes()..].iter().sum()
    }
}

/// `argmax_k joint[k] + joint[K+k]`, ties to the smaller class.
pub fn predict(dist: &HeadDistribution) -> ActionLabel {
    let k = dist.num_classes();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..k {
        let score = dist.joint[c] + dist.joint[k + c];
        if score > best_score {
            best = c;
            best_score = score;
        }
    }
    ActionLabel(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_dim_on_32x32() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        let x = Tensor::full(&[2, 3, 32, 32], 0.5);
        let f = m.extract_features(&x).unwrap();
        assert_eq!(f.shape(), &[2, 32]);
        assert_eq!(f.slice_outer(0, 1).data(), f.slice_outer(1, 2).data());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let m = Model::new(ModelConfig::default(), 3).unwrap();
        let f = m.extract_features(&Tensor::zeros(&[1, 3, 16, 16])).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_incompatible_spatial_size() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        assert!(m.extract_features(&Tensor::zeros(&[1, 3, 12, 32])).is_err());
    }

    #[test]
    fn param_count_matches_config() {
        let cfg = ModelConfig::default();
        let m = Model::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.param_count(), cfg.param_count());
        // 3→8: 224, 8→16: 1168, 16→32: 4640, head 32·20 + 20 = 660
        assert_eq!(cfg.param_count(), 224 + 1168 + 4640 + 660);
    }

    #[test]
    fn uniform_logits() {
        let d = HeadDistribution::from_logits(&[0.0; 20], 10);
        assert!(d.joint.iter().all(|&p| (p - 0.05).abs() < 1e-15));
        assert!((d.source_mass() - 0.5).abs() < 1e-12);
        assert!((d.target_mass() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn peaked_source_neuron() {
        let mut z = [0.0; 20];
        z[3] = 10.0;
        let d = HeadDistribution::from_logits(&z, 10);
        let argmax = (0..20).max_by(|&a, &b| d.joint[a].total_cmp(&d.joint[b])).unwrap();
        assert_eq!(argmax, 3);
        assert!(d.source_mass() > 0.999);
        assert_eq!(predict(&d), ActionLabel(3));
    }

    #[test]
    fn predict_sum_rule() {
        let mut joint = vec![0.3 / 18.0; 20];
        joint[2] = 0.3;
        joint[12] = 0.4;
        let d = HeadDistribution {
            joint,
            src_half: vec![0.1; 10],
            tgt_half: vec![0.1; 10],
        };
        assert_eq!(predict(&d), ActionLabel(2));
    }

    #[test]
    fn predict_ties_to_smallest() {
        let d = HeadDistribution::from_logits(&[1.0, 1.0, 0.0, 0.0], 2);
        assert_eq!(predict(&d), ActionLabel(0));
    }

    #[test]
    fn zero_target_half_makes_prediction_follow_source() {
        let mut m = Model::new(ModelConfig::default(), 5).unwrap();
        m.head.zero_target_half();
        let f = Tensor::new(vec![1, 32], (0..32).map(|i| (i as f64).cos()).collect()).unwrap();
        let d = &m.head_forward(&f).unwrap()[0];
        let best_src = (0..10)
            .max_by(|&a, &b| d.src_half[a].total_cmp(&d.src_half[b]))
            .unwrap();
        assert_eq!(predict(d), ActionLabel(best_src));
        assert!(d.tgt_half.iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    fn noise_batch(n: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![n, 3, 32, 32], data).unwrap()
    }

    fn column_stats(t: &Tensor, j: usize) -> (f64, f64) {
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let col: Vec<f64> = (0..n).map(|i| t.data()[i * d + j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn calibrate_standardizes_first_stage() {
        let mut m = Model::new(ModelConfig::default(), 1).unwrap();
        let x = noise_batch(16, 2);
        m.calibrate(&x).unwrap();
        let pre = conv_stage_pre(&x, &m.extractor.stages[0]).unwrap();
        let [n, c, h, w] = pre.shape()[..] else { panic!() };
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| pre.data()[(i * c + ch) * h * w..(i * c + ch + 1) * h * w].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "channel {ch} var {var}");
        }
    }

    #[test]
    fn calibrate_unit_rms_and_centered_logits() {
        let mut m = Model::new(ModelConfig::default(), 4).unwrap();
        let x = noise_batch(16, 5);
        m.calibrate(&x).unwrap();
        let f = m.extract_features(&x).unwrap();
        let rms = (f.data().iter().map(|v| v * v).sum::<f64>() / f.numel() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9, "rms {rms}");

        let mut tape = Tape::new();
        let fv = tape.constant(f);
        let vars = m.head.bind(&mut tape, false);
        let logits = m.head.logits_with(&mut tape, fv, &vars).unwrap();
        let logits = tape.value(logits).clone();
        for k in 0..logits.shape()[1] {
            assert!(column_stats(&logits, k).0.abs() < 1e-9, "logit {k} not centered");
        }
    }

    #[test]
    fn calibrate_is_deterministic() {
        let x = noise_batch(8, 9);
        let mut a = Model::new(ModelConfig::default(), 3).unwrap();
        let mut b = Model::new(ModelConfig::default(), 3).unwrap();
        a.calibrate(&x).unwrap();
        b.calibrate(&x).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
