//! Confusion-matrix segmentation metrics.
//!
//! Per class `k`, with `TP = cm[k][k]`, `FN = row_k − TP`, `FP = col_k − TP`
//! and `TN = total − TP − FN − FP`:
//!
//! | metric      | definition          |
//! |-------------|---------------------|
//! | Accuracy    | (TP+TN)/total       |
//! | Recall      | TP/(TP+FN)          |
//! | Precision   | TP/(TP+FP)          |
//! | Specificity | TN/(TN+FP)          |
//! | F-Score     | 2PR/(P+R)           |
//! | FPR         | FP/(FP+TN)          |
//! | IoU         | TP/(TP+FP+FN)       |
//!
//! A zero denominator yields 0 and raises [`ClassMetrics::degenerate`].
//! The "Average" column is the unweighted macro-average over classes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::signalgen::LabelMask;
use crate::{Error, Result, SignalClass, NUM_CLASSES};

/// `counts[i * k + j]` = pixels of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn accumulate(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("confusion: {} true vs {} predicted pixels", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t >= self.k || p >= self.k {
                return Err(Error::InvalidInput(format!("label pair ({t}, {p}) outside [0, {})", self.k)));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    /// Element-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k, "confusion matrices of different class counts");
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }
}

/// Confusion matrix of two equally shaped masks.
pub fn confusion(truth: &LabelMask, pred: &LabelMask) -> Result<ConfusionMatrix> {
    if (truth.h, truth.w) != (pred.h, pred.w) {
        return Err(Error::Shape(format!(
            "confusion: masks {}x{} and {}x{}",
            truth.h, truth.w, pred.h, pred.w
        )));
    }
    let mut cm = ConfusionMatrix::new(NUM_CLASSES);
    cm.accumulate(&truth.labels, &pred.labels)?;
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Accuracy,
    Recall,
    Precision,
    Specificity,
    FScore,
    Fpr,
    Iou,
}

impl Metric {
    /// Row order of the report tables.
    pub const ALL: [Metric; 7] =
        [Metric::Accuracy, Metric::Recall, Metric::Precision, Metric::Specificity, Metric::FScore, Metric::Fpr, Metric::Iou];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::Recall => "Recall",
            Metric::Precision => "Precision",
            Metric::Specificity => "Specificity",
            Metric::FScore => "F-Score",
            Metric::Fpr => "FPR",
            Metric::Iou => "IoU",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub specificity: f64,
    pub f_score: f64,
    pub fpr: f64,
    pub iou: f64,
    /// Some denominator was zero and the affected values were set to 0.
    pub degenerate: bool,
}

impl ClassMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Recall => self.recall,
            Metric::Precision => self.precision,
            Metric::Specificity => self.specificity,
            Metric::FScore => self.f_score,
            Metric::Fpr => self.fpr,
            Metric::Iou => self.iou,
        }
    }
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix, k: usize) -> ClassMetrics {
    let total = cm.total();
    let tp = cm.get(k, k);
    let fn_ = cm.row_sum(k) - tp;
    let fp = cm.col_sum(k) - tp;
    let tn = total - tp - fn_ - fp;
    let mut degenerate = false;
    let accuracy = ratio(tp + tn, total, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let specificity = ratio(tn, tn + fp, &mut degenerate);
    let fpr = ratio(fp, fp + tn, &mut degenerate);
    let iou = ratio(tp, tp + fp + fn_, &mut degenerate);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    ClassMetrics { accuracy, recall, precision, specificity, f_score, fpr, iou, degenerate }
}

/// Per-class values, their macro-average, and global pixel accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub average: ClassMetrics,
    /// trace / total.
    pub global_accuracy: f64,
    pub total_pixels: u64,
    pub confusion: ConfusionMatrix,
}

pub fn average_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let per_class: Vec<_> = (0..cm.classes()).map(|k| per_class_metrics(cm, k)).collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let average = ClassMetrics {
        accuracy: mean(|c| c.accuracy),
        recall: mean(|c| c.recall),
        precision: mean(|c| c.precision),
        specificity: mean(|c| c.specificity),
        f_score: mean(|c| c.f_score),
        fpr: mean(|c| c.fpr),
        iou: mean(|c| c.iou),
        degenerate: per_class.iter().any(|c| c.degenerate),
    };
    let total = cm.total();
    MetricsReport {
        global_accuracy: if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 },
        per_class,
        average,
        total_pixels: total,
        confusion: cm.clone(),
    }
}

/// Report columns: the average followed by 5G, LTE and Noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Average,
    Class(SignalClass),
}

impl Column {
    pub const ALL: [Column; 4] = [
        Column::Average,
        Column::Class(SignalClass::Nr),
        Column::Class(SignalClass::Lte),
        Column::Class(SignalClass::Noise),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::Average => "Average",
            Column::Class(c) => c.report_name(),
        }
    }
}

impl MetricsReport {
    pub fn value(&self, metric: Metric, column: Column) -> f64 {
        match column {
            Column::Average => self.average.get(metric),
            Column::Class(c) => self.per_class[c.index()].get(metric),
        }
    }

    pub fn mean_iou(&self) -> f64 {
        self.average.iou
    }

    /// Table layout: one row per metric, columns `Average,5G,LTE,Noise`,
    /// followed by a `Global Accuracy` row (average column only).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(",Average,5G,LTE,Noise\n");
        for m in Metric::ALL {
            out.push_str(m.name());
            for col in Column::ALL {
                let _ = write!(out, ",{:.6}", self.value(m, col));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "Global Accuracy,{:.6},,,", self.global_accuracy);
        out
    }
}
