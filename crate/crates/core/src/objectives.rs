//! Training objectives: pair cross-entropy, Gaussian KL, and the
//! self-supervised edge-existence loss on the attention projection.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddigraph::MessageGraph;
use crate::encoder::pair_logits;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Attempts per requested negative before the non-edge sampler gives up.
const NON_EDGE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kl: f64,
    pub ss: f64,
    pub total: f64,
}

/// Mean binary cross-entropy over pair logits `[B × 1]`.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract("pair labels must be 0 or 1"));
    }
    tape.bce_with_logits(logits, labels.iter().copied().collect())
}

/// How the per-dimension KL terms of one pair are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReduction {
    /// `0.5 · Σ_j (…)` over latent dimensions.
    Sum,
    /// The same sum divided by the latent width.
    #[default]
    Mean,
}

/// `0.5 · Σ_j (μ_j² + σ_j² − 2 log σ_j − 1)` per row (or its mean over `j`),
/// averaged over rows.
pub fn kl_loss(tape: &mut Tape, mu: Var, log_sigma: Var, reduction: KlReduction) -> Result<Var> {
    let (ms, ls) = (tape.value(mu).shape(), tape.value(log_sigma).shape());
    if ms != ls {
        return Err(Error::dim("kl_loss", ms, ls));
    }
    let (rows, cols) = tape.value(mu).dims2()?;
    if rows == 0 {
        return Err(Error::contract("kl_loss on an empty batch"));
    }
    let mu2 = tape.mul(mu, mu)?;
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, two_ls)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    let per_dim = match reduction {
        KlReduction::Sum => 1.0,
        KlReduction::Mean => cols.max(1) as f64,
    };
    Ok(tape.scale(s, 0.5 / (rows as f64 * per_dim)))
}

/// Candidate node pairs and labels for the edge-existence loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSample {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl EdgeSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Message-graph edges as positives plus as many uniformly drawn non-edges,
/// each kept independently with probability `p_e`.
pub fn sample_edges<R: Rng + ?Sized>(graph: &MessageGraph, p_e: f64, rng: &mut R) -> Result<EdgeSample> {
    if !(p_e > 0.0 && p_e <= 1.0) {
        return Err(Error::contract("p_e must lie in (0, 1]"));
    }
    let n = graph.n_nodes();
    let positives = graph.edges();
    let mut negatives = Vec::with_capacity(positives.len());
    if n >= 2 {
        let mut attempts = 0;
        while negatives.len() < positives.len() && attempts < NON_EDGE_ATTEMPTS * positives.len() {
            attempts += 1;
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n - 1);
            let j = if j >= i { j + 1 } else { j };
            if !graph.has_edge(i, j) {
                negatives.push((i.min(j), i.max(j)));
            }
        }
        if negatives.len() < positives.len() {
            log::warn!(
                "edge-existence sampler found {} of {} non-edges",
                negatives.len(),
                positives.len()
            );
        }
    }
    let mut out = EdgeSample::default();
    let labelled = positives
        .iter()
        .map(|&p| (p, 1.0))
        .chain(negatives.into_iter().map(|p| (p, 0.0)));
    for (pair, label) in labelled {
        if p_e >= 1.0 || rng.random_bool(p_e) {
            out.pairs.push(pair);
            out.labels.push(label);
        }
    }
    Ok(out)
}

/// Mean BCE of the projected dot-product logits on a sampled edge set.
/// An empty sample contributes zero.
pub fn ss_loss(tape: &mut Tape, proj: Var, sample: &EdgeSample) -> Result<Var> {
    if sample.is_empty() {
        log::debug!("edge-existence sample empty; loss term is zero");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let logits = pair_logits(tape, proj, &sample.pairs)?;
    let labels: Arc<[f64]> = sample.labels.iter().copied().collect();
    tape.bce_with_logits(logits, labels)
}

/// Unweighted sum of the three terms; a non-finite term aborts.
pub fn total_loss(ce: f64, kl: f64, ss: f64, epoch: usize) -> Result<LossBreakdown> {
    for (component, value) in [("ce", ce), ("kl", kl), ("ss", ss)] {
        if !value.is_finite() {
            return Err(Error::NonFinite { component, epoch, value });
        }
    }
    Ok(LossBreakdown {
        ce,
        kl,
        ss,
        total: ce + kl + ss,
    })
}
