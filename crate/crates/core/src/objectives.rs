//! Loss terms of the two-level adversarial objective and the phase
//! objectives built from them.
//!
//! With `K` classes and the `2K`-way joint softmax `q`:
//!
//! | term    | batch  | value                                                   |
//! |---------|--------|---------------------------------------------------------|
//! | `l_cs`  | source | `−mean log p_src[y]` (source-half classifier)           |
//! | `l_ct`  | source | `−mean log p_tgt[y]` (target-half classifier)           |
//! | `l_cst` | both   | `−mean_s log Σ_{k<K} q_k − mean_t log Σ_{k≥K} q_k`      |
//! | `l_fd`  | target | `−mean_t (log Σ_{k<K} q_k + log Σ_{k≥K} q_k)`           |
//! | `l_fc`  | source | `−mean_s (log q_y + log q_{K+y})`                       |
//! | `l_e`   | target | `−mean_t Σ_k q_k log q_k`                               |
//!
//! The classifier phase minimizes `l_cs + l_ct + l_cst` over the head; the
//! feature phase minimizes `l_fc + α(l_fd + l_e)` over the extractor. Every
//! logarithm is clamped at [`LOG_CLAMP`](crate::autograd::LOG_CLAMP).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{HeadDistribution, HeadVars};
use crate::skeleton::{ActionLabel, Domain};
use crate::tensor::Tensor;

/// Which distribution the supervised task terms `l_cs`/`l_ct` read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskSoftmax {
    /// Each half renormalized on its own (K-way softmax).
    #[default]
    PerHalf,
    /// The matching entries of the 2K-way joint softmax.
    Joint,
}

/// How `l_e` treats each half of the joint distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    /// Entries of the joint softmax as they are.
    #[default]
    Unnormalized,
    /// Entropy of each half after renormalizing it to sum to one.
    Renormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub task_softmax: TaskSoftmax,
    pub entropy: EntropyMode,
}

/// Loss-term ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Full objective.
    #[default]
    None,
    /// Drop the domain-level adversarial term `l_fd`.
    NoLfd,
    /// Drop the entropy term `l_e`.
    NoLe,
    /// Source-only supervised training on `l_cs`; target data unused.
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Baseline, Ablation::NoLfd, Ablation::NoLe, Ablation::None];

    pub fn enabled(self) -> Vec<LossTerm> {
        use LossTerm::*;
        match self {
            Ablation::None => vec![Cs, Ct, Cst, Fc, Fd, E],
            Ablation::NoLfd => vec![Cs, Ct, Cst, Fc, E],
            Ablation::NoLe => vec![Cs, Ct, Cst, Fc, Fd],
            Ablation::Baseline => vec![Cs],
        }
    }

    pub fn is_enabled(self, term: LossTerm) -> bool {
        self.enabled().contains(&term)
    }

    pub fn uses_target(self) -> bool {
        self != Ablation::Baseline
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoLfd => "no-lfd",
            Ablation::NoLe => "no-le",
            Ablation::Baseline => "baseline",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "full",
            Ablation::NoLfd => "w/o L_FD",
            Ablation::NoLe => "w/o L_E",
            Ablation::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}` (none, no-lfd, no-le, baseline)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossTerm {
    #[serde(rename = "L_Cs")]
    Cs,
    #[serde(rename = "L_Ct")]
    Ct,
    #[serde(rename = "L_Cst")]
    Cst,
    #[serde(rename = "L_FC")]
    Fc,
    #[serde(rename = "L_FD")]
    Fd,
    #[serde(rename = "L_E")]
    E,
}

/// A batch from one domain. Target batches carry no labels at all.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    images: Tensor,
    labels: Option<Vec<ActionLabel>>,
    domain: Domain,
}

impl DomainBatch {
    pub fn source(images: Tensor, labels: Vec<ActionLabel>) -> Result<Self> {
        if images.shape().first() != Some(&labels.len()) {
            return Err(Error::shape(
                "source batch",
                format!("{} labels for images {:?}", labels.len(), images.shape()),
            ));
        }
        Ok(DomainBatch {
            images,
            labels: Some(labels),
            domain: Domain::Source,
        })
    }

    pub fn target(images: Tensor) -> Self {
        DomainBatch {
            images,
            labels: None,
            domain: Domain::Target,
        }
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Result<&[ActionLabel]> {
        match (&self.labels, self.domain) {
            (Some(l), Domain::Source) => Ok(l),
            _ => Err(Error::Data("supervised loss needs a labeled source batch".into())),
        }
    }
}

fn check_labels(labels: &[ActionLabel], head: &HeadVars, tape: &Tape) -> Result<()> {
    let n = tape.value(head.joint).shape()[0];
    if labels.len() != n {
        return Err(Error::shape("loss", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|l| l.0 >= head.num_classes) {
        return Err(Error::Data(format!(
            "label {} out of range for {} classes",
            bad.0, head.num_classes
        )));
    }
    Ok(())
}

fn neg_mean_log(tape: &mut Tape, v: Var) -> Var {
    let l = tape.log_clamped(v);
    let m = tape.mean(l);
    tape.scale(m, -1.0)
}

fn half_mass(tape: &mut Tape, head: &HeadVars, target_half: bool) -> Result<Var> {
    let k = head.num_classes;
    let (a, b) = if target_half { (k, 2 * k) } else { (0, k) };
    let s = tape.slice_cols(head.joint, a, b)?;
    tape.sum_cols(s)
}

fn task_ce(tape: &mut Tape, head: &HeadVars, labels: &[ActionLabel], target_half: bool, opts: LossOptions) -> Result<Var> {
    check_labels(labels, head, tape)?;
    let k = head.num_classes;
    let picked = match opts.task_softmax {
        TaskSoftmax::PerHalf => {
            let dist = if target_half { head.tgt_half } else { head.src_half };
            let idx: Vec<usize> = labels.iter().map(|l| l.0).collect();
            tape.gather(dist, &idx)?
        }
        TaskSoftmax::Joint => {
            let off = if target_half { k } else { 0 };
            let idx: Vec<usize> = labels.iter().map(|l| off + l.0).collect();
            tape.gather(head.joint, &idx)?
        }
    };
    Ok(neg_mean_log(tape, picked))
}

/// Source-half classifier cross-entropy on labeled source data.
pub fn loss_cs(tape: &mut Tape, src: &HeadVars, labels: &[ActionLabel], opts: LossOptions) -> Result<Var> {
    task_ce(tape, src, labels, false, opts)
}

/// Target-half classifier cross-entropy on labeled source data.
pub fn loss_ct(tape: &mut Tape, src: &HeadVars, labels: &[ActionLabel], opts: LossOptions) -> Result<Var> {
    task_ce(tape, src, labels, true, opts)
}

/// Domain discrimination: source rows should put their mass in the source
/// half, target rows in the target half.
pub fn loss_cst(tape: &mut Tape, src: &HeadVars, tgt: &HeadVars) -> Result<Var> {
    let s = half_mass(tape, src, false)?;
    let a = neg_mean_log(tape, s);
    let t = half_mass(tape, tgt, true)?;
    let b = neg_mean_log(tape, t);
    tape.add(a, b)
}

/// Domain confusion on target rows; minimal when both halves hold ½.
pub fn loss_fd(tape: &mut Tape, tgt: &HeadVars) -> Result<Var> {
    let s = half_mass(tape, tgt, false)?;
    let a = neg_mean_log(tape, s);
    let t = half_mass(tape, tgt, true)?;
    let b = neg_mean_log(tape, t);
    tape.add(a, b)
}

/// Class-level confusion on source rows: the true class should take mass in
/// both halves.
pub fn loss_fc(tape: &mut Tape, src: &HeadVars, labels: &[ActionLabel]) -> Result<Var> {
    check_labels(labels, src, tape)?;
    let k = src.num_classes;
    let idx_s: Vec<usize> = labels.iter().map(|l| l.0).collect();
    let idx_t: Vec<usize> = labels.iter().map(|l| k + l.0).collect();
    let ps = tape.gather(src.joint, &idx_s)?;
    let a = neg_mean_log(tape, ps);
    let pt = tape.gather(src.joint, &idx_t)?;
    let b = neg_mean_log(tape, pt);
    tape.add(a, b)
}

/// Entropy of the target predictions.
pub fn loss_e(tape: &mut Tape, tgt: &HeadVars, opts: LossOptions) -> Result<Var> {
    let entropy = |tape: &mut Tape, p: Var| -> Result<Var> {
        let l = tape.log_clamped(p);
        let pl = tape.mul(p, l)?;
        let rows = tape.sum_cols(pl)?;
        let m = tape.mean(rows);
        Ok(tape.scale(m, -1.0))
    };
    match opts.entropy {
        EntropyMode::Unnormalized => entropy(tape, tgt.joint),
        EntropyMode::Renormalized => {
            let a = entropy(tape, tgt.src_half)?;
            let b = entropy(tape, tgt.tgt_half)?;
            tape.add(a, b)
        }
    }
}

/// `α(p) = 2/(1+exp(−γp)) − 1`, ramping the adversarial weight from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub gamma: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule { gamma: 10.0 }
    }
}

impl AlphaSchedule {
    pub fn alpha(&self, progress: f64) -> f64 {
        2.0 / (1.0 + (-self.gamma * progress).exp()) - 1.0
    }
}

/// Raw values of the six loss terms. Terms that were not evaluated are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub l_cs: f64,
    pub l_ct: f64,
    pub l_cst: f64,
    pub l_fd: f64,
    pub l_fc: f64,
    pub l_e: f64,
}

/// Losses and phase objectives of one optimization step.
///
/// `classifier_objective = l_cs + l_ct + l_cst` and
/// `feature_objective = l_fc + alpha·(l_fd + l_e)`, each restricted to the
/// terms the ablation enables. The source-only baseline optimizes `l_cs` in
/// both phases.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub alpha: f64,
    pub l_cs: f64,
    pub l_ct: f64,
    pub l_cst: f64,
    pub l_fd: f64,
    pub l_fc: f64,
    pub l_e: f64,
    pub classifier_objective: f64,
    pub feature_objective: f64,
}

pub const REPORT_CSV_HEADER: &str =
    "step,alpha,l_cs,l_ct,l_cst,l_fd,l_fc,l_e,classifier_objective,feature_objective";

impl LossReport {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.alpha,
            self.l_cs,
            self.l_ct,
            self.l_cst,
            self.l_fd,
            self.l_fc,
            self.l_e,
            self.classifier_objective,
            self.feature_objective
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Data(format!("history row needs 10 fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Data(format!("bad number `{}` in history row", f[i])))
        };
        Ok(LossReport {
            step: f[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad step `{}`", f[0])))?,
            alpha: num(1)?,
            l_cs: num(2)?,
            l_ct: num(3)?,
            l_cst: num(4)?,
            l_fd: num(5)?,
            l_fc: num(6)?,
            l_e: num(7)?,
            classifier_objective: num(8)?,
            feature_objective: num(9)?,
        })
    }
}

/// Fills both phase objectives from the six term values.
pub fn assemble(step: usize, v: LossValues, alpha: f64, ablation: Ablation) -> LossReport {
    let on = |t: LossTerm, x: f64| if ablation.is_enabled(t) { x } else { 0.0 };
    let classifier_objective = v.l_cs + on(LossTerm::Ct, v.l_ct) + on(LossTerm::Cst, v.l_cst);
    let feature_objective = if ablation == Ablation::Baseline {
        v.l_cs
    } else {
        v.l_fc + alpha * (on(LossTerm::Fd, v.l_fd) + on(LossTerm::E, v.l_e))
    };
    LossReport {
        step,
        alpha,
        l_cs: v.l_cs,
        l_ct: v.l_ct,
        l_cst: v.l_cst,
        l_fd: v.l_fd,
        l_fc: v.l_fc,
        l_e: v.l_e,
        classifier_objective,
        feature_objective,
    }
}

/// Records the classifier-phase objective. Returns the objective node and
/// the term values it contains.
pub fn classifier_objective(
    tape: &mut Tape,
    src: &HeadVars,
    tgt: Option<&HeadVars>,
    labels: &[ActionLabel],
    ablation: Ablation,
    opts: LossOptions,
) -> Result<(Var, LossValues)> {
    let mut vals = LossValues::default();
    let cs = loss_cs(tape, src, labels, opts)?;
    vals.l_cs = tape.value(cs).item();
    let mut total = cs;
    if ablation.is_enabled(LossTerm::Ct) {
        let ct = loss_ct(tape, src, labels, opts)?;
        vals.l_ct = tape.value(ct).item();
        total = tape.add(total, ct)?;
    }
    if ablation.is_enabled(LossTerm::Cst) {
        let tgt = tgt.ok_or_else(|| Error::Data("l_cst needs a target batch".into()))?;
        let cst = loss_cst(tape, src, tgt)?;
        vals.l_cst = tape.value(cst).item();
        total = tape.add(total, cst)?;
    }
    Ok((total, vals))
}

/// Records the feature-phase objective `l_fc + α(l_fd + l_e)` (or `l_cs`
/// for the baseline).
pub fn feature_objective(
    tape: &mut Tape,
    src: &HeadVars,
    tgt: Option<&HeadVars>,
    labels: &[ActionLabel],
    alpha: f64,
    ablation: Ablation,
    opts: LossOptions,
) -> Result<(Var, LossValues)> {
    let mut vals = LossValues::default();
    if ablation == Ablation::Baseline {
        let cs = loss_cs(tape, src, labels, opts)?;
        vals.l_cs = tape.value(cs).item();
        return Ok((cs, vals));
    }
    let tgt = tgt.ok_or_else(|| Error::Data("feature objective needs a target batch".into()))?;
    let fc = loss_fc(tape, src, labels)?;
    vals.l_fc = tape.value(fc).item();
    let mut adv: Option<Var> = None;
    if ablation.is_enabled(LossTerm::Fd) {
        let fd = loss_fd(tape, tgt)?;
        vals.l_fd = tape.value(fd).item();
        adv = Some(fd);
    }
    if ablation.is_enabled(LossTerm::E) {
        let e = loss_e(tape, tgt, opts)?;
        vals.l_e = tape.value(e).item();
        adv = Some(match adv {
            Some(a) => tape.add(a, e)?,
            None => e,
        });
    }
    let total = match adv {
        Some(a) => {
            let scaled = tape.scale(a, alpha);
            tape.add(fc, scaled)?
        }
        None => fc,
    };
    Ok((total, vals))
}

/// Evaluates all six terms on explicit per-sample distributions.
pub fn evaluate_losses(
    src: &[HeadDistribution],
    labels: &[ActionLabel],
    tgt: &[HeadDistribution],
    opts: LossOptions,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let s = HeadVars::from_distributions(&mut tape, src)?;
    let t = HeadVars::from_distributions(&mut tape, tgt)?;
    let cs = loss_cs(&mut tape, &s, labels, opts)?;
    let ct = loss_ct(&mut tape, &s, labels, opts)?;
    let cst = loss_cst(&mut tape, &s, &t)?;
    let fd = loss_fd(&mut tape, &t)?;
    let fc = loss_fc(&mut tape, &s, labels)?;
    let e = loss_e(&mut tape, &t, opts)?;
    let v = |x: Var| tape.value(x).item();
    Ok(LossValues {
        l_cs: v(cs),
        l_ct: v(ct),
        l_cst: v(cst),
        l_fd: v(fd),
        l_fc: v(fc),
        l_e: v(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn uniform(k: usize) -> HeadDistribution {
        HeadDistribution::from_logits(&vec![0.0; 2 * k], k)
    }

    fn dist(joint: Vec<f64>) -> HeadDistribution {
        let k = joint.len() / 2;
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| if s > 0.0 { x / s } else { 1.0 / k as f64 }).collect()
        };
        HeadDistribution {
            src_half: norm(&joint[..k]),
            tgt_half: norm(&joint[k..]),
            joint,
        }
    }

    fn one_hot(len: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        v
    }

    #[test]
    fn uniform_closed_forms() {
        let k = 10;
        let src = vec![uniform(k); 3];
        let labels = [ActionLabel(0), ActionLabel(4), ActionLabel(9)];
        let v = evaluate_losses(&src, &labels, &src, LossOptions::default()).unwrap();
        assert!((v.l_cs - 10f64.ln()).abs() < 1e-9);
        assert!((v.l_ct - 10f64.ln()).abs() < 1e-9);
        assert!((v.l_cst - 2.0 * LN_2).abs() < 1e-9);
        assert!((v.l_fd - 2.0 * LN_2).abs() < 1e-9);
        assert!((v.l_fc - 2.0 * 20f64.ln()).abs() < 1e-9);
        assert!((v.l_e - 20f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions_give_zero() {
        let k = 4;
        let src = vec![dist(one_hot(2 * k, 1)), dist(one_hot(2 * k, 3))];
        let tgt = vec![dist(one_hot(2 * k, k + 2)); 2];
        let labels = [ActionLabel(1), ActionLabel(3)];
        let mut tgt_on_src = src.clone();
        for (d, l) in tgt_on_src.iter_mut().zip(&labels) {
            d.tgt_half = one_hot(k, l.0);
        }
        let v = evaluate_losses(&tgt_on_src, &labels, &tgt, LossOptions::default()).unwrap();
        assert_eq!(v.l_cs, 0.0);
        assert_eq!(v.l_ct, 0.0);
        assert_eq!(v.l_cst, 0.0);
        assert_eq!(v.l_e, 0.0);
    }

    #[test]
    fn clamp_arithmetic() {
        let k = 3;
        // source rows with all their mass in the target half
        let wrong = vec![dist(one_hot(2 * k, k))];
        let tgt = vec![dist(one_hot(2 * k, k))];
        let v = evaluate_losses(&wrong, &[ActionLabel(0)], &tgt, LossOptions::default()).unwrap();
        assert!((v.l_cst - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!((v.l_fd - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn fd_and_fc_minimum_at_half_split() {
        let k = 5;
        let mut joint = vec![0.0; 2 * k];
        joint[2] = 0.5;
        joint[k + 2] = 0.5;
        let d = vec![dist(joint)];
        let v = evaluate_losses(&d, &[ActionLabel(2)], &d, LossOptions::default()).unwrap();
        assert!((v.l_fd - 2.0 * LN_2).abs() < 1e-12);
        assert!((v.l_fc - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn fc_punishes_single_half_mass() {
        let k = 5;
        let d = vec![dist(one_hot(2 * k, 2))];
        let v = evaluate_losses(&d, &[ActionLabel(2)], &d, LossOptions::default()).unwrap();
        assert!(v.l_fc > 27.0);
    }

    #[test]
    fn fd_symmetric_under_half_swap() {
        let joint = vec![0.1, 0.2, 0.05, 0.3, 0.25, 0.1];
        let mut swapped = joint[3..].to_vec();
        swapped.extend_from_slice(&joint[..3]);
        let a = evaluate_losses(&[dist(joint.clone())], &[ActionLabel(0)], &[dist(joint)], LossOptions::default()).unwrap();
        let b = evaluate_losses(&[dist(swapped.clone())], &[ActionLabel(0)], &[dist(swapped)], LossOptions::default()).unwrap();
        assert!((a.l_fd - b.l_fd).abs() < 1e-15);
    }

    #[test]
    fn batch_mean() {
        let a = dist(vec![0.2, 0.3, 0.1, 0.4]);
        let b = dist(vec![0.05, 0.15, 0.5, 0.3]);
        let la = evaluate_losses(&[a.clone()], &[ActionLabel(1)], &[a.clone()], LossOptions::default()).unwrap();
        let lb = evaluate_losses(&[b.clone()], &[ActionLabel(0)], &[b.clone()], LossOptions::default()).unwrap();
        let both = evaluate_losses(&[a.clone(), b.clone()], &[ActionLabel(1), ActionLabel(0)], &[a, b], LossOptions::default()).unwrap();
        assert!((both.l_cs - (la.l_cs + lb.l_cs) / 2.0).abs() < 1e-15);
        assert!((both.l_e - (la.l_e + lb.l_e) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn renormalized_entropy_of_uniform() {
        let opts = LossOptions {
            entropy: EntropyMode::Renormalized,
            ..LossOptions::default()
        };
        let u = vec![uniform(10)];
        let v = evaluate_losses(&u, &[ActionLabel(0)], &u, opts).unwrap();
        assert!((v.l_e - 2.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn joint_task_softmax_reads_joint_entries() {
        let opts = LossOptions {
            task_softmax: TaskSoftmax::Joint,
            ..LossOptions::default()
        };
        let u = vec![uniform(10)];
        let v = evaluate_losses(&u, &[ActionLabel(0)], &u, opts).unwrap();
        assert!((v.l_cs - 20f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let u = vec![uniform(3)];
        assert!(evaluate_losses(&u, &[ActionLabel(3)], &u, LossOptions::default()).is_err());
    }

    #[test]
    fn target_batches_have_no_labels() {
        let b = DomainBatch::target(Tensor::zeros(&[2, 3, 4, 4]));
        assert!(b.labels().is_err());
        let s = DomainBatch::source(Tensor::zeros(&[2, 3, 4, 4]), vec![ActionLabel(0); 2]).unwrap();
        assert_eq!(s.labels().unwrap().len(), 2);
        assert!(DomainBatch::source(Tensor::zeros(&[2, 3, 4, 4]), vec![ActionLabel(0)]).is_err());
    }

    #[test]
    fn alpha_values() {
        let s = AlphaSchedule::default();
        assert_eq!(s.alpha(0.0), 0.0);
        assert!((s.alpha(1.0) - 0.99990920).abs() < 1e-7);
        assert!((s.alpha(0.1) - 0.5f64.tanh()).abs() < 1e-12);
        assert!((s.alpha(0.1) - 0.46211716).abs() < 1e-8);
    }

    #[test]
    fn assemble_examples() {
        let zero = assemble(0, LossValues::default(), 0.7, Ablation::None);
        assert_eq!((zero.classifier_objective, zero.feature_objective), (0.0, 0.0));

        let v = LossValues {
            l_cs: 0.5,
            l_ct: 0.25,
            l_cst: 1.0,
            l_fc: 1.0,
            l_fd: 2.0,
            l_e: 3.0,
        };
        let r = assemble(3, v, 0.5, Ablation::None);
        assert_eq!(r.feature_objective, 3.5);
        assert_eq!(r.classifier_objective, 1.75);
        assert_eq!(assemble(0, v, 0.0, Ablation::None).feature_objective, 1.0);
        assert_eq!(assemble(0, v, 0.5, Ablation::NoLfd).feature_objective, 2.5);
        assert_eq!(assemble(0, v, 0.5, Ablation::NoLe).feature_objective, 2.0);
        let b = assemble(0, v, 0.5, Ablation::Baseline);
        assert_eq!((b.classifier_objective, b.feature_objective), (0.5, 0.5));
    }

    #[test]
    fn csv_round_trip() {
        let r = LossReport {
            step: 4,
            alpha: 0.1234567891234,
            l_cs: 1.0 / 3.0,
            l_ct: 2.5,
            l_cst: 1e-17,
            l_fd: 0.0,
            l_fc: 7.0,
            l_e: 2.0f64.sqrt(),
            classifier_objective: 9.75,
            feature_objective: 1.0 / 7.0,
        };
        assert_eq!(LossReport::from_csv_row(&r.to_csv_row()).unwrap(), r);
    }

    #[test]
    fn ablation_parsing() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("everything".parse::<Ablation>().is_err());
        assert!(!Ablation::NoLfd.enabled().contains(&LossTerm::Fd));
    }
}
