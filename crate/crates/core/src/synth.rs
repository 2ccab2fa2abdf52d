//! Stochastic-block synthetic DDI datasets.
//!
//! Drugs are split into contiguous, near-equal blocks. Each unordered pair
//! gets one interaction with probability `p_in` (same block) or `p_out`
//! (different blocks); its direction is a fair coin and its type comes from
//! a distribution specific to the block pair. Drugs left without any
//! interaction receive one extra edge to a random block mate so that every
//! drug appears in the edges file.
//!
//! Feature layout (`f_dim` columns):
//! * `0..n_blocks`: block one-hot plus N(0, 0.3²) noise;
//! * `n_blocks..f_dim-4`: pure N(0, 0.3²) noise;
//! * last four: degree-correlated columns (standardised degree, log degree,
//!   relative degree, above-median indicator), each with the same noise.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ddigraph::{DdiDataset, Edge};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const FEATURE_NOISE_STD: f64 = 0.3;
pub const DEGREE_COLUMNS: usize = 4;
/// Probability mass on the block pair's preferred interaction type.
pub const PRIMARY_TYPE_MASS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_drugs: usize,
    pub n_types: usize,
    pub n_blocks: usize,
    pub f_dim: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_drugs: 200,
            n_types: 6,
            n_blocks: 5,
            f_dim: 12,
            p_in: 0.15,
            p_out: 0.01,
            seed: 7,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::contract(format!("synthetic generator: {m}")));
        if self.n_blocks < 2 {
            return fail("n_blocks must be at least 2");
        }
        if self.n_drugs < self.n_blocks {
            return fail("n_drugs must be at least n_blocks");
        }
        if self.n_types == 0 {
            return fail("n_types must be positive");
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return fail("probabilities must satisfy 0 <= p_out < p_in <= 1");
        }
        if self.f_dim < self.n_blocks + DEGREE_COLUMNS {
            return fail("f_dim must be at least n_blocks + 4");
        }
        Ok(())
    }
}

/// Block of drug `i` under the contiguous assignment.
pub fn block_of(i: usize, n_drugs: usize, n_blocks: usize) -> usize {
    i * n_blocks / n_drugs
}

fn preferred_type(a: usize, b: usize, n_blocks: usize, n_types: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    (a * n_blocks + b) % n_types
}

fn draw_type<R: Rng>(rng: &mut R, a: usize, b: usize, p: &SynthParams) -> usize {
    if rng.random_bool(PRIMARY_TYPE_MASS) {
        preferred_type(a, b, p.n_blocks, p.n_types)
    } else {
        rng.random_range(0..p.n_types)
    }
}

pub fn synth_generate(p: &SynthParams) -> Result<DdiDataset> {
    p.validate()?;
    let n = p.n_drugs;
    let block: Vec<usize> = (0..n).map(|i| block_of(i, n, p.n_blocks)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut edges = Vec::new();
    let mut degree = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let prob = if block[i] == block[j] { p.p_in } else { p.p_out };
            if !rng.random_bool(prob) {
                continue;
            }
            let forward = rng.random_bool(0.5);
            let ty = draw_type(&mut rng, block[i], block[j], p);
            let (src, dst) = if forward { (i, j) } else { (j, i) };
            edges.push(Edge { src, dst, ty });
            degree[i] += 1;
            degree[j] += 1;
        }
    }
    for i in 0..n {
        if degree[i] > 0 {
            continue;
        }
        let mates: Vec<usize> = (0..n).filter(|&j| j != i && block[j] == block[i]).collect();
        let j = if mates.is_empty() {
            (i + 1 + rng.random_range(0..n - 1)) % n
        } else {
            mates[rng.random_range(0..mates.len())]
        };
        let ty = draw_type(&mut rng, block[i], block[j], p);
        edges.push(Edge { src: i, dst: j, ty });
        degree[i] += 1;
        degree[j] += 1;
    }

    let noise = Normal::new(0.0, FEATURE_NOISE_STD).map_err(|e| Error::contract(e.to_string()))?;
    let degf: Vec<f64> = degree.iter().map(|&d| d as f64).collect();
    let mean = degf.iter().sum::<f64>() / n as f64;
    let std = math::sqrt(degf.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64);
    let max = degf.iter().copied().fold(0.0, f64::max).max(1.0);
    let mut sorted = degf.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];

    let mut data = Vec::with_capacity(n * p.f_dim);
    for i in 0..n {
        let d = degf[i];
        let degree_cols = [
            if std > 0.0 { (d - mean) / std } else { 0.0 },
            math::ln_1p(d) / math::ln_1p(max),
            d / max,
            if d > median { 1.0 } else { 0.0 },
        ];
        for c in 0..p.f_dim {
            let base = if c < p.n_blocks {
                if block[i] == c { 1.0 } else { 0.0 }
            } else if c >= p.f_dim - DEGREE_COLUMNS {
                degree_cols[c - (p.f_dim - DEGREE_COLUMNS)]
            } else {
                0.0
            };
            data.push(base + noise.sample(&mut rng));
        }
    }
    let features = Tensor::new(&[n, p.f_dim], data)?;
    let width = n.to_string().len().max(4);
    let drug_ids = (0..n).map(|i| format!("D{:0width$}", i, width = width)).collect();
    let type_labels = (0..p.n_types).map(|t| t.to_string()).collect();
    DdiDataset::new(drug_ids, type_labels, features, edges)
}
