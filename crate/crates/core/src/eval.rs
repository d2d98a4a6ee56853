//! Top-1 evaluation and confusion matrices.

use std::fmt::Write as _;

use crate::encoder::{encode_batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::skeleton::{ActionLabel, SkeletonSequence};
use crate::tensor::Tensor;

/// Images per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// `K × K` counts, rows indexed by true class and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: ActionLabel, predicted: ActionLabel) -> Result<()> {
        let k = self.num_classes;
        if truth.0 >= k || predicted.0 >= k {
            return Err(Error::Data(format!(
                "class pair ({}, {}) out of range for {k} classes",
                truth.0, predicted.0
            )));
        }
        self.counts[truth.0 * k + predicted.0] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let k = self.num_classes;
        &self.counts[truth * k..(truth + 1) * k]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Header `class,0,1,…` followed by one row per true class.
    pub fn to_csv(&self) -> String {
        let k = self.num_classes;
        let mut out = String::from("class");
        for j in 0..k {
            write!(out, ",{j}").unwrap();
        }
        out.push('\n');
        for i in 0..k {
            write!(out, "{i}").unwrap();
            for c in self.row(i) {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty confusion csv".into()))?;
        let k = header.split(',').count().saturating_sub(1);
        if k == 0 {
            return Err(Error::Data("confusion csv header has no classes".into()));
        }
        let mut m = ConfusionMatrix::new(k);
        let mut rows = 0;
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if i >= k || fields.len() != k + 1 {
                return Err(Error::Data(format!("malformed confusion csv row {}", i + 2)));
            }
            for (j, f) in fields[1..].iter().enumerate() {
                m.counts[i * k + j] = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("bad count `{f}` in confusion csv")))?;
            }
            rows += 1;
        }
        if rows != k {
            return Err(Error::Data(format!("confusion csv has {rows} rows for {k} classes")));
        }
        Ok(m)
    }

    /// Grayscale heatmap as binary PPM. Each row is scaled by its own
    /// maximum; every cell becomes a `cell × cell` block.
    pub fn to_ppm(&self, cell: usize) -> Vec<u8> {
        let k = self.num_classes;
        let side = k * cell.max(1);
        let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
        for y in 0..side {
            let i = y / cell.max(1);
            let max = self.row(i).iter().copied().max().unwrap_or(0);
            for x in 0..side {
                let j = x / cell.max(1);
                let v = if max == 0 {
                    0
                } else {
                    (255.0 * self.get(i, j) as f64 / max as f64).round() as u8
                };
                out.extend_from_slice(&[v, v, v]);
            }
        }
        out
    }
}

/// Accuracy and confusion matrix of `model` over pre-encoded images.
pub fn evaluate_images(model: &Model, images: &Tensor, labels: &[ActionLabel]) -> Result<(f64, ConfusionMatrix)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    if images.shape().first() != Some(&n) {
        return Err(Error::shape(
            "evaluate",
            format!("{n} labels for images {:?}", images.shape()),
        ));
    }
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let preds = model.predict(&images.slice_outer(start, end))?;
        for (truth, pred) in labels[start..end].iter().zip(preds) {
            cm.record(*truth, pred)?;
        }
    }
    Ok((cm.accuracy(), cm))
}

/// Labels of an evaluation set; every item must carry one.
pub fn labels_of(dataset: &[SkeletonSequence]) -> Result<Vec<ActionLabel>> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .ok_or_else(|| Error::Data(format!("item {i} has no label; evaluation needs labels")))
        })
        .collect()
}

pub fn evaluate(model: &Model, dataset: &[SkeletonSequence], encoder: &EncoderConfig) -> Result<(f64, ConfusionMatrix)> {
    let labels = labels_of(dataset)?;
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let images = encode_batch(dataset, encoder)?;
    evaluate_images(model, &images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let mut cm = ConfusionMatrix::new(4);
        let pairs = [(0, 0), (1, 1), (2, 2), (3, 3), (0, 0), (1, 1), (2, 3), (3, 0)];
        for (t, p) in pairs {
            cm.record(ActionLabel(t), ActionLabel(p)).unwrap();
        }
        assert_eq!(cm.total(), 8);
        assert_eq!(cm.accuracy(), 0.75);
        assert_eq!(cm.row_sum(2), 2);
    }

    #[test]
    fn csv_round_trip() {
        let mut cm = ConfusionMatrix::new(3);
        cm.record(ActionLabel(2), ActionLabel(0)).unwrap();
        cm.record(ActionLabel(1), ActionLabel(1)).unwrap();
        let csv = cm.to_csv();
        assert!(csv.starts_with("class,0,1,2\n"));
        assert_eq!(ConfusionMatrix::from_csv(&csv).unwrap(), cm);
    }

    #[test]
    fn ppm_scaling_by_row_max() {
        let mut cm = ConfusionMatrix::new(2);
        for _ in 0..4 {
            cm.record(ActionLabel(0), ActionLabel(0)).unwrap();
        }
        cm.record(ActionLabel(0), ActionLabel(1)).unwrap();
        let ppm = cm.to_ppm(1);
        let header = b"P6\n2 2\n255\n";
        assert!(ppm.starts_with(header));
        let px = &ppm[header.len()..];
        assert_eq!(px[0], 255);
        assert_eq!(px[3], 64);
        // empty second row stays black
        assert_eq!(&px[6..], &[0; 6]);
        assert_eq!(cm.to_ppm(4).len(), b"P6\n8 8\n255\n".len() + 8 * 8 * 3);
    }

    #[test]
    fn out_of_range_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.record(ActionLabel(2), ActionLabel(0)).is_err());
    }
}
