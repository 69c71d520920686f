//! Classification metrics: accuracy, AUROC and support-weighted P/R/F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_label, Label};

/// A predicted score and its gold label (0 or 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub score: f64,
    pub label: u8,
}

impl EvalPair {
    pub fn new(score: f64, label: u8) -> Self {
        Self { score, label }
    }
}

fn check(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Contract("metrics need at least one pair".into()));
    }
    for p in pairs {
        if p.label > 1 {
            return Err(Error::Contract(format!("label must be 0 or 1, got {}", p.label)));
        }
        if !p.score.is_finite() {
            return Err(Error::Domain {
                op: "metrics",
                detail: format!("non-finite score {}", p.score),
            });
        }
    }
    Ok(())
}

fn decision(score: f64, threshold: f64) -> u8 {
    match predict_label(score, threshold) {
        Label::Hateful => 1,
        Label::NonHateful => 0,
    }
}

pub fn accuracy(pairs: &[EvalPair], threshold: f64) -> Result<f64> {
    check(pairs)?;
    let correct = pairs.iter().filter(|p| decision(p.score, threshold) == p.label).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Area under the ROC curve from the rank-sum statistic, ties given midranks.
pub fn auroc(pairs: &[EvalPair]) -> Result<f64> {
    check(pairs)?;
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].score.total_cmp(&pairs[b].score));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].score == pairs[order[i]].score {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = order[i..=j].iter().filter(|&&k| pairs[k].label == 1).count();
        pos_rank_sum += midrank * group_pos as f64;
        i = j + 1;
    }
    let (np, nn) = (positives as f64, negatives as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class precision, recall and F1 averaged with true-class support
/// weights. A class that is never predicted gets precision 0.
pub fn weighted_prf(pairs: &[EvalPair], threshold: f64) -> Result<WeightedPrf> {
    check(pairs)?;
    let n = pairs.len() as f64;
    let mut out = WeightedPrf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for class in 0..=1u8 {
        let mut tp = 0usize;
        let mut predicted = 0usize;
        let mut support = 0usize;
        for p in pairs {
            let d = decision(p.score, threshold);
            tp += usize::from(d == class && p.label == class);
            predicted += usize::from(d == class);
            support += usize::from(p.label == class);
        }
        if support == 0 {
            continue;
        }
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = tp as f64 / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / n;
        out.precision += w * precision;
        out.recall += w * recall;
        out.f1 += w * f1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    /// `None` when the split holds a single class.
    pub auroc: Option<f64>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

impl MetricsReport {
    pub fn compute(pairs: &[EvalPair], threshold: f64) -> Result<Self> {
        let prf = weighted_prf(pairs, threshold)?;
        let auroc = match auroc(pairs) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            n: pairs.len(),
            accuracy: accuracy(pairs, threshold)?,
            auroc,
            weighted_precision: prf.precision,
            weighted_recall: prf.recall,
            weighted_f1: prf.f1,
        })
    }

    /// Aligned two-column plain-text rendering.
    pub fn to_table(&self) -> String {
        let fmt = |x: f64| format!("{x:.4}");
        let rows = [
            ("n", self.n.to_string()),
            ("accuracy", fmt(self.accuracy)),
            ("auroc", self.auroc.map_or_else(|| "undefined".to_string(), fmt)),
            ("weighted_precision", fmt(self.weighted_precision)),
            ("weighted_recall", fmt(self.weighted_recall)),
            ("weighted_f1", fmt(self.weighted_f1)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:>9}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests;
