//! Binary classification metrics over pair probabilities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Decision threshold for accuracy and F1.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub f1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim("metrics", &[scores.len()], &[labels.len()]));
    }
    if scores.is_empty() {
        return Err(Error::contract("metrics need at least one scored pair"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::contract("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("scores must not be NaN"));
    }
    Ok(())
}

pub fn evaluate_scores(scores: &[f64], labels: &[u8]) -> Result<Metrics> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= THRESHOLD, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        f1,
        n_pos: tp + fneg,
        n_neg: tn + fp,
    })
}

/// Mann–Whitney statistic with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps midranks integral
    let mut pos_rank_sum2 = 0u128;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1..=end, midrank*2 = start + end + 1
        let mid2 = (start + end + 1) as u128;
        let group_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        pos_rank_sum2 += mid2 * group_pos;
        start = end;
    }
    let n_pos = n_pos as u128;
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(Some(u2 as f64 / (2 * n_pos * n_neg as u128) as f64))
}

/// Area under the precision-recall step curve (average precision), one step
/// per distinct score.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_tp = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        tp += group_tp;
        seen += end - start;
        if group_tp > 0 {
            area += (group_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
        start = end;
    }
    Ok(Some(area))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::contract("sample std needs at least two values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Ok(Self {
            mean,
            std: math::sqrt(ss / (n - 1.0)),
        })
    }

    /// `"m ± s"` in percent with two decimals.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub accuracy: MeanStd,
    /// `None` if any run had an undefined value.
    pub auroc: Option<MeanStd>,
    pub auprc: Option<MeanStd>,
    pub f1: MeanStd,
}

impl MetricsSummary {
    pub fn from_runs(runs: &[Metrics]) -> Result<Self> {
        let col = |f: fn(&Metrics) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let opt = |f: fn(&Metrics) -> Option<f64>| -> Result<Option<MeanStd>> {
            match runs.iter().map(f).collect::<Option<Vec<_>>>() {
                Some(v) => MeanStd::of(&v).map(Some),
                None => Ok(None),
            }
        };
        Ok(Self {
            runs: runs.len(),
            accuracy: MeanStd::of(&col(|m| m.accuracy))?,
            auroc: opt(|m| m.auroc)?,
            auprc: opt(|m| m.auprc)?,
            f1: MeanStd::of(&col(|m| m.f1))?,
        })
    }

    /// `label | accuracy | AUROC | AUPRC | F1`, each cell `"m ± s"`.
    pub fn table_row(&self, label: &str) -> String {
        let cell = |m: Option<MeanStd>| m.map_or_else(|| String::from("n/a"), |m| m.percent());
        format!(
            "{label} | {} | {} | {} | {}",
            self.accuracy.percent(),
            cell(self.auroc),
            cell(self.auprc),
            self.f1.percent()
        )
    }
}

pub const TABLE_HEADER: &str = "model | accuracy (%) | AUROC (%) | AUPRC (%) | F1 (%)";
