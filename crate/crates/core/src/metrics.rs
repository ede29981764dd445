//! Confusion-matrix segmentation metrics under the LIP and ATR protocols.

use crate::error::{Error, Result};

/// `counts[gt][pred]` pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts every pixel of a prediction against its ground truth.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.is_empty() || pred.len() != gt.len() {
            return Err(Error::Data(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
        }
        let c = self.classes;
        if let Some(&bad) = pred.iter().chain(gt).find(|&&v| v as usize >= c) {
            return Err(Error::Data(format!("class id {bad} out of range for {c} classes")));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    /// Entrywise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Data(format!("cannot merge {} and {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Lip,
    Atr,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtrScores {
    pub foreground_accuracy: f64,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub avg_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: Protocol,
    /// `None` for classes absent from both ground truth and prediction.
    pub class_iou: Vec<Option<f64>>,
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
    pub atr: Option<AtrScores>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Scores a confusion matrix. Classes absent from both ground truth and
/// prediction are left out of every mean.
pub fn report(cm: &ConfusionMatrix, protocol: Protocol) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("no pixels were evaluated".into()));
    }
    let c = cm.classes();
    let diag: Vec<u64> = (0..c).map(|k| cm.get(k, k)).collect();
    let rows: Vec<u64> = (0..c).map(|k| cm.row_sum(k)).collect();
    let cols: Vec<u64> = (0..c).map(|k| cm.col_sum(k)).collect();
    let class_iou: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let union = rows[k] + cols[k] - diag[k];
            (union > 0).then(|| ratio(diag[k], union))
        })
        .collect();
    let pixel_accuracy = ratio(diag.iter().sum(), total);
    let mean_accuracy = mean((0..c).filter(|&k| rows[k] > 0).map(|k| ratio(diag[k], rows[k])));
    let mean_iou = mean(class_iou.iter().flatten().copied());
    let atr = (protocol == Protocol::Atr).then(|| {
        let fg_total: u64 = rows[1..].iter().sum();
        let fg_correct: u64 = diag[1..].iter().sum();
        let present: Vec<usize> = (1..c).filter(|&k| rows[k] + cols[k] > 0).collect();
        let precision = |k: usize| ratio(diag[k], cols[k]);
        let recall = |k: usize| ratio(diag[k], rows[k]);
        let f1 = |k: usize| {
            let (p, r) = (precision(k), recall(k));
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        };
        AtrScores {
            foreground_accuracy: ratio(fg_correct, fg_total),
            avg_precision: mean(present.iter().map(|&k| precision(k))),
            avg_recall: mean(present.iter().map(|&k| recall(k))),
            avg_f1: mean(present.iter().map(|&k| f1(k))),
        }
    });
    Ok(MetricsReport { protocol, class_iou, pixel_accuracy, mean_accuracy, mean_iou, atr })
}

impl MetricsReport {
    /// Long-format rows `(class, metric, value)`; aggregates use class `all`.
    pub fn rows(&self, class_names: &[String]) -> Vec<(String, &'static str, f64)> {
        let mut out = Vec::new();
        for (k, iou) in self.class_iou.iter().enumerate() {
            if let Some(v) = iou {
                let name = class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
                out.push((name, "iou", *v));
            }
        }
        let all = |m, v| ("all".to_string(), m, v);
        out.push(all("pixel_accuracy", self.pixel_accuracy));
        out.push(all("mean_accuracy", self.mean_accuracy));
        out.push(all("mean_iou", self.mean_iou));
        if let Some(a) = &self.atr {
            out.push(all("foreground_accuracy", a.foreground_accuracy));
            out.push(all("avg_precision", a.avg_precision));
            out.push(all("avg_recall", a.avg_recall));
            out.push(all("avg_f1", a.avg_f1));
        }
        out
    }
}
