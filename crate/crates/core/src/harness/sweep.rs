use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::metrics::{Column, Metric, MetricsReport};
use crate::{Error, Result};

pub const SWEEP_HEADER: &str = "model,attack,eps_raw,metric,class,value";
/// Metric name of the extra pooled-accuracy cells.
pub const GLOBAL_ACCURACY: &str = "Global Accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Undefended,
    Defended,
}

impl ModelTag {
    pub const ALL: [ModelTag; 2] = [ModelTag::Undefended, ModelTag::Defended];

    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Undefended => "undefended",
            ModelTag::Defended => "defended",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ModelTag::Undefended => "Undefended",
            ModelTag::Defended => "Defended",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: ModelTag,
    pub attack: AttackKind,
    pub eps_raw: u32,
    pub report: MetricsReport,
}

/// One numeric cell of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub model: ModelTag,
    pub attack: AttackKind,
    pub eps_raw: u32,
    pub metric: String,
    pub class: String,
    pub value: f64,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.6}")
}

/// Every metric of every column, then the global accuracy, per row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let prefix = format!("{},{},{}", r.model.name(), r.attack.name(), r.eps_raw);
        for m in Metric::ALL {
            for c in Column::ALL {
                let _ = writeln!(out, "{prefix},{},{},{}", m.name(), c.name(), format_value(r.report.value(m, c)));
            }
        }
        let _ = writeln!(out, "{prefix},{GLOBAL_ACCURACY},Average,{}", format_value(r.report.global_accuracy));
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepCell>> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(Error::InvalidInput(format!("sweep CSV must start with `{SWEEP_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::InvalidInput(format!("sweep CSV line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(SweepCell {
                model: ModelTag::parse(f[0]).ok_or_else(bad)?,
                attack: AttackKind::parse(f[1]).ok_or_else(bad)?,
                eps_raw: f[2].parse().map_err(|_| bad())?,
                metric: f[3].to_string(),
                class: f[4].to_string(),
                value: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Least-squares slope of `y` on `x`; `None` when `x` has no spread.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Intercept matching [`ols_slope`].
pub fn ols_intercept(points: &[(f64, f64)], slope: f64) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    my - slope * mx
}

/// `(ε_raw, mean IoU)` in row order for one model and attack.
pub fn iou_curve(rows: &[SweepRow], model: ModelTag, attack: AttackKind) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.model == model && r.attack == attack)
        .map(|r| (r.eps_raw as f64, r.report.mean_iou()))
        .collect()
}

/// Number of strict increases along a curve.
pub fn inversions(curve: &[(f64, f64)]) -> usize {
    curve.windows(2).filter(|w| w[1].1 > w[0].1).count()
}
