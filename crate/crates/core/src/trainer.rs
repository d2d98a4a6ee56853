//! Alternating two-phase training over a labeled source stream and an
//! unlabeled target stream.
//!
//! Each step first updates the head (`C_s`, `C_t`) on
//! `l_cs + l_ct + l_cst` with the extractor frozen, then runs a fresh
//! forward pass and updates the extractor on `l_fc + α(l_fd + l_e)` with the
//! head frozen. Progress `p = completed_steps / total_steps` drives both the
//! α ramp and the learning-rate annealing.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::encoder::{encode_batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_images, labels_of, ConfusionMatrix};
use crate::model::{HeadVars, Model, ModelConfig};
use crate::objectives::{
    assemble, classifier_objective, feature_objective, Ablation, AlphaSchedule, DomainBatch, LossOptions,
    LossReport, LossTerm, LossValues, TaskSoftmax, REPORT_CSV_HEADER,
};
use crate::optim::{sgd_step, Param, SgdConfig};
use crate::skeleton::{split_hash, split_target, ActionLabel, SkeletonSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Items drawn from each domain per step.
    pub batch_size: usize,
    pub seed: u64,
    pub alpha_gamma: f64,
    pub sgd: SgdConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub losses: LossOptions,
    /// Source images, evenly strided over the set, used by
    /// [`Model::calibrate`] before the first step;
    /// 0 keeps the plain random initialization.
    pub calibration_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            alpha_gamma: 10.0,
            sgd: SgdConfig::default(),
            encoder: EncoderConfig::default(),
            model: ModelConfig::default(),
            ablation: Ablation::None,
            losses: LossOptions::default(),
            calibration_samples: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.alpha_gamma >= 0.0 && self.alpha_gamma.is_finite()) {
            return Err(Error::Config(format!("alpha_gamma must be >= 0, got {}", self.alpha_gamma)));
        }
        self.sgd.validate()?;
        self.encoder.validate()?;
        self.model.validate()?;
        let unit = self.model.spatial_multiple();
        if self.encoder.out_height % unit != 0 || self.encoder.out_width % unit != 0 {
            return Err(Error::Config(format!(
                "encoder output {}x{} must be divisible by {unit} for {} conv stages",
                self.encoder.out_height,
                self.encoder.out_width,
                self.model.stages.len()
            )));
        }
        Ok(())
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        AlphaSchedule {
            gamma: self.alpha_gamma,
        }
    }
}

/// Encoded images with optional labels. Target-train sets are built
/// without labels so the training loop cannot read them.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    images: Tensor,
    labels: Option<Vec<ActionLabel>>,
}

impl EncodedSet {
    /// Encodes a labeled set; every item must carry a label.
    pub fn labeled(seqs: &[SkeletonSequence], encoder: &EncoderConfig) -> Result<Self> {
        let labels = labels_of(seqs)?;
        Ok(EncodedSet {
            images: encode_batch(seqs, encoder)?,
            labels: Some(labels),
        })
    }

    /// Encodes a set and drops whatever labels it carries.
    pub fn unlabeled(seqs: &[SkeletonSequence], encoder: &EncoderConfig) -> Result<Self> {
        Ok(EncodedSet {
            images: encode_batch(seqs, encoder)?,
            labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> Option<&[ActionLabel]> {
        self.labels.as_deref()
    }

    fn gather(&self, idx: &[usize]) -> Tensor {
        let per = self.images.numel() / self.len();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        Tensor::new(shape, data).expect("gathered shape")
    }

    fn source_batch(&self, idx: &[usize]) -> Result<DomainBatch> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("source set has no labels".into()))?;
        DomainBatch::source(self.gather(idx), idx.iter().map(|&i| labels[i]).collect())
    }

    fn target_batch(&self, idx: &[usize]) -> DomainBatch {
        DomainBatch::target(self.gather(idx))
    }
}

/// Endless shuffled index stream; reshuffles once fewer than a batch of
/// unseen items remain.
struct Stream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Stream { order, pos: 0, rng }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        if self.pos + batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + batch].to_vec();
        self.pos += batch;
        out
    }
}

fn assign_grads(tape: &Tape, params: Vec<&mut Param>, vars: &[Var]) {
    for (p, &v) in params.into_iter().zip(vars) {
        p.grad = Some(tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())));
    }
}

fn check_finite(vals: &LossValues) -> Result<()> {
    let all = [vals.l_cs, vals.l_ct, vals.l_cst, vals.l_fd, vals.l_fc, vals.l_e];
    if all.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss values {vals:?}")))
    }
}

/// Owns the model and performs the two update phases.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
}

impl Trainer {
    /// Fresh model seeded from `cfg.seed`. The source-only baseline starts
    /// with a zeroed target half so prediction reduces to `C_s`.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
        if cfg.ablation == Ablation::Baseline {
            model.head.zero_target_half();
        }
        Ok(Trainer { model, cfg })
    }

    /// Data-dependent initialization on source images; see
    /// [`Model::calibrate`]. Keeps the baseline's target half at zero.
    pub fn calibrate(&mut self, source_images: &Tensor) -> Result<()> {
        self.model.calibrate(source_images)?;
        if self.cfg.ablation == Ablation::Baseline {
            self.model.head.zero_target_half();
        }
        Ok(())
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn head_outputs(
        &self,
        tape: &mut Tape,
        src: &DomainBatch,
        tgt: Option<&DomainBatch>,
        fvars: &[Var],
        hvars: &[Var],
    ) -> Result<(HeadVars, Option<HeadVars>)> {
        let mut run = |batch: &DomainBatch| -> Result<HeadVars> {
            let x = tape.constant(batch.images().clone());
            let f = self.model.extractor.forward_with(tape, x, fvars)?;
            self.model.head.forward_with(tape, f, hvars)
        };
        let s = run(src)?;
        let t = match (self.cfg.ablation.uses_target(), tgt) {
            (false, _) => None,
            (true, Some(b)) => Some(run(b)?),
            (true, None) => return Err(Error::Data("this objective needs a target batch".into())),
        };
        Ok((s, t))
    }

    /// Phase 1: updates the head only, with the extractor frozen.
    pub fn classifier_phase(&mut self, src: &DomainBatch, tgt: Option<&DomainBatch>, progress: f64) -> Result<LossValues> {
        let labels = src.labels()?;
        let mut tape = Tape::new();
        let fvars = self.model.extractor.bind(&mut tape, false);
        let hvars = self.model.head.bind(&mut tape, true);
        let (s, t) = self.head_outputs(&mut tape, src, tgt, &fvars, &hvars)?;
        let (obj, vals) = classifier_objective(&mut tape, &s, t.as_ref(), labels, self.cfg.ablation, self.cfg.losses)?;
        check_finite(&vals)?;
        tape.backward(obj)?;
        assign_grads(&tape, self.model.head.params_mut(), &hvars);
        sgd_step(&mut self.model.head.params_mut(), &self.cfg.sgd, progress)?;
        if self.cfg.ablation == Ablation::Baseline && self.cfg.losses.task_softmax == TaskSoftmax::Joint {
            // joint-softmax l_cs pushes the target logits down; keep C_t silent
            self.model.head.zero_target_half();
        }
        Ok(vals)
    }

    /// Phase 2: fresh forward pass, updates the extractor only.
    pub fn feature_phase(
        &mut self,
        src: &DomainBatch,
        tgt: Option<&DomainBatch>,
        alpha: f64,
        progress: f64,
    ) -> Result<LossValues> {
        let labels = src.labels()?;
        let mut tape = Tape::new();
        let fvars = self.model.extractor.bind(&mut tape, true);
        let hvars = self.model.head.bind(&mut tape, false);
        let (s, t) = self.head_outputs(&mut tape, src, tgt, &fvars, &hvars)?;
        let (obj, vals) = feature_objective(&mut tape, &s, t.as_ref(), labels, alpha, self.cfg.ablation, self.cfg.losses)?;
        check_finite(&vals)?;
        tape.backward(obj)?;
        assign_grads(&tape, self.model.extractor.params_mut(), &fvars);
        sgd_step(&mut self.model.extractor.params_mut(), &self.cfg.sgd, progress)?;
        Ok(vals)
    }

    /// One optimization step at progress `p ∈ [0, 1]`.
    pub fn train_step(&mut self, step: usize, src: &DomainBatch, tgt: &DomainBatch, progress: f64) -> Result<LossReport> {
        if !(0.0..=1.0).contains(&progress) {
            return Err(Error::Config(format!("progress must be in [0,1], got {progress}")));
        }
        let tgt = self.cfg.ablation.uses_target().then_some(tgt);
        let alpha = self.cfg.alpha_schedule().alpha(progress);
        let head = self.classifier_phase(src, tgt, progress)?;
        let feat = self.feature_phase(src, tgt, alpha, progress)?;
        let vals = LossValues {
            l_cs: head.l_cs,
            l_ct: head.l_ct,
            l_cst: head.l_cst,
            l_fd: feat.l_fd,
            l_fc: feat.l_fc,
            l_e: feat.l_e,
        };
        let mut report = assemble(step, vals, alpha, self.cfg.ablation);
        if self.cfg.ablation == Ablation::Baseline {
            report.feature_objective = feat.l_cs;
        }
        Ok(report)
    }
}

/// Per-step losses plus per-epoch test accuracy and wall-clock time.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub steps: Vec<LossReport>,
    pub epoch_accuracy: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Wall-clock times are excluded from equality.
impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps && self.epoch_accuracy == other.epoch_accuracy
    }
}

impl TrainHistory {
    /// One [`LossReport`] row per step under [`REPORT_CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.steps {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn steps_from_csv(text: &str) -> Result<Vec<LossReport>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_CSV_HEADER => {}
            _ => return Err(Error::Data("history csv header mismatch".into())),
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(LossReport::from_csv_row)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Snapshot from the epoch with the highest test accuracy (earliest on
    /// ties).
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub history: TrainHistory,
}

/// Steps per epoch: the shorter stream defines an epoch.
pub fn steps_per_epoch(source: usize, target: usize, batch: usize) -> usize {
    source.min(target) / batch
}

pub fn train(
    cfg: &TrainConfig,
    source: &[SkeletonSequence],
    target_train: &[SkeletonSequence],
    target_test: &[SkeletonSequence],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() || target_train.is_empty() || target_test.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty datasets (source {}, target train {}, target test {})",
            source.len(),
            target_train.len(),
            target_test.len()
        )));
    }
    let src = EncodedSet::labeled(source, &cfg.encoder)?;
    let tgt = EncodedSet::unlabeled(target_train, &cfg.encoder)?;
    let test = EncodedSet::labeled(target_test, &cfg.encoder)?;
    train_encoded(cfg, &src, &tgt, &test)
}

/// [`train`] on pre-encoded sets.
pub fn train_encoded(cfg: &TrainConfig, src: &EncodedSet, tgt: &EncodedSet, test: &EncodedSet) -> Result<TrainOutcome> {
    cfg.validate()?;
    let test_labels = test
        .labels()
        .ok_or_else(|| Error::Data("target test set has no labels".into()))?;
    if src.labels().is_none() {
        return Err(Error::Data("source set has no labels".into()));
    }
    let k = cfg.model.num_classes;
    for l in src.labels().into_iter().flatten().chain(test_labels) {
        if l.0 >= k {
            return Err(Error::Data(format!("label {} out of range for {k} classes", l.0)));
        }
    }
    let per_epoch = steps_per_epoch(src.len(), tgt.len(), cfg.batch_size);
    if per_epoch == 0 {
        return Err(Error::Data(format!(
            "batch size {} exceeds the smaller training set ({} source, {} target)",
            cfg.batch_size,
            src.len(),
            tgt.len()
        )));
    }
    let total = cfg.epochs * per_epoch;

    let mut trainer = Trainer::new(cfg.clone())?;
    if cfg.calibration_samples > 0 {
        // evenly strided, so class-ordered data still calibrates on every class
        let n = cfg.calibration_samples.min(src.len());
        let idx: Vec<usize> = (0..n).map(|i| i * src.len() / n).collect();
        trainer.calibrate(&src.gather(&idx))?;
    }
    let mut src_stream = Stream::new(src.len(), cfg.seed, 1);
    let mut tgt_stream = Stream::new(tgt.len(), cfg.seed, 2);
    let mut history = TrainHistory::default();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut last = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        for i in 0..per_epoch {
            let step = epoch * per_epoch + i;
            let progress = step as f64 / total as f64;
            let sb = src.source_batch(&src_stream.next(cfg.batch_size))?;
            let tb = if cfg.ablation.uses_target() {
                tgt.target_batch(&tgt_stream.next(cfg.batch_size))
            } else {
                // never read; avoids touching target data at all
                DomainBatch::target(Tensor::zeros(&[1]))
            };
            history.steps.push(trainer.train_step(step, &sb, &tb, progress)?);
        }
        let (acc, cm) = evaluate_images(trainer.model(), test.images(), test_labels)?;
        history.epoch_accuracy.push(acc);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        if best.as_ref().map_or(true, |b| acc > b.2) {
            best = Some((trainer.model().clone(), epoch, acc));
        }
        last = Some((acc, cm));
    }

    let (best_model, best_epoch, best_accuracy) = best.expect("epochs >= 1");
    let (final_accuracy, confusion) = last.expect("epochs >= 1");
    Ok(TrainOutcome {
        model: trainer.into_model(),
        best_model,
        best_epoch,
        best_accuracy,
        final_accuracy,
        confusion,
        history,
    })
}

/// Machine-readable run summary. Contains no timings, so identical runs
/// serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub config_hash: String,
    pub ablation: Ablation,
    pub enabled_losses: Vec<LossTerm>,
}

impl RunSummary {
    pub fn new(cfg: &TrainConfig, outcome: &TrainOutcome, config_hash: impl Into<String>) -> Self {
        RunSummary {
            final_accuracy: outcome.final_accuracy,
            best_accuracy: outcome.best_accuracy,
            best_epoch: outcome.best_epoch,
            epochs: cfg.epochs,
            seed: cfg.seed,
            config_hash: config_hash.into(),
            ablation: cfg.ablation,
            enabled_losses: cfg.ablation.enabled(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    /// Final-epoch target-test accuracy per seed.
    pub accuracies: Vec<f64>,
    /// Split hash per seed, to confirm every variant saw the same data.
    pub split_hashes: Vec<String>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, ablation: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == ablation)
    }

    /// `variant,seed_<s>…,mean`, one row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push_str(",mean\n");
        for r in &self.rows {
            out.push_str(r.ablation.label());
            for a in &r.accuracies {
                out.push_str(&format!(",{a}"));
            }
            out.push_str(&format!(",{}\n", r.mean()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// Shared settings; `seed` and `ablation` are overridden per run.
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
    pub target_fraction: f64,
    pub variants: Vec<Ablation>,
    /// Concurrent training runs; 0 uses the available parallelism.
    pub threads: usize,
}

impl AblationConfig {
    pub fn new(base: TrainConfig, seeds: Vec<u64>) -> Self {
        AblationConfig {
            base,
            seeds,
            target_fraction: 0.3,
            variants: Ablation::ALL.to_vec(),
            threads: 0,
        }
    }
}

/// Trains every variant on every seed. For each seed the target set is
/// split once and all variants share that split and its encoding.
pub fn run_ablation(cfg: &AblationConfig, source: &[SkeletonSequence], target: &[SkeletonSequence]) -> Result<AblationTable> {
    if cfg.seeds.is_empty() || cfg.variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let src = EncodedSet::labeled(source, &cfg.base.encoder)?;
    let mut rows: Vec<AblationRow> = cfg
        .variants
        .iter()
        .map(|&ablation| AblationRow {
            ablation,
            accuracies: Vec::new(),
            split_hashes: Vec::new(),
        })
        .collect();

    for &seed in &cfg.seeds {
        let (train_part, test_part) = split_target(target, cfg.target_fraction, seed)?;
        let hash = split_hash(&train_part, &test_part)?;
        let tgt = EncodedSet::unlabeled(&train_part, &cfg.base.encoder)?;
        let test = EncodedSet::labeled(&test_part, &cfg.base.encoder)?;
        let run = |ablation: Ablation| -> Result<f64> {
            let run_cfg = TrainConfig {
                seed,
                ablation,
                ..cfg.base.clone()
            };
            Ok(train_encoded(&run_cfg, &src, &tgt, &test)?.final_accuracy)
        };
        let mut accs = Vec::with_capacity(cfg.variants.len());
        for group in cfg.variants.chunks(threads.max(1)) {
            if group.len() == 1 {
                accs.push(run(group[0])?);
                continue;
            }
            let results: Vec<Result<f64>> = std::thread::scope(|s| {
                let handles: Vec<_> = group.iter().map(|&a| s.spawn(move || run(a))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Data("training thread panicked".into()))))
                    .collect()
            });
            for r in results {
                accs.push(r?);
            }
        }
        for (row, acc) in rows.iter_mut().zip(accs) {
            row.accuracies.push(acc);
            row.split_hashes.push(hash.clone());
        }
    }
    Ok(AblationTable {
        seeds: cfg.seeds.clone(),
        rows,
    })
}
