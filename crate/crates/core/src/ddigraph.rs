//! The typed drug-drug interaction graph: dataset, splits, negative
//! sampling and the undirected message-passing graph.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Segments;
use crate::tensor::Tensor;

/// A directed, typed interaction `src → dst` of type `ty`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdiDataset {
    drug_ids: Vec<String>,
    type_labels: Vec<String>,
    features: Tensor,
    edges: Vec<Edge>,
}

impl DdiDataset {
    pub fn new(
        drug_ids: Vec<String>,
        type_labels: Vec<String>,
        features: Tensor,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let n = drug_ids.len();
        let (rows, _) = features.dims2()?;
        if rows != n {
            return Err(Error::dim("dataset features", features.shape(), &[n]));
        }
        if !features.is_finite() {
            return Err(Error::Domain {
                op: "dataset features",
                detail: "non-finite feature value".into(),
            });
        }
        let n_types = type_labels.len();
        let mut seen = BTreeSet::new();
        for e in &edges {
            for idx in [e.src, e.dst] {
                if idx >= n {
                    return Err(Error::Index {
                        what: "edge drug index",
                        index: idx,
                        len: n,
                    });
                }
            }
            if e.ty >= n_types {
                return Err(Error::Index {
                    what: "edge type index",
                    index: e.ty,
                    len: n_types,
                });
            }
            if !seen.insert(*e) {
                return Err(Error::contract(format!(
                    "duplicate interaction ({}, {}, {})",
                    drug_ids[e.src], drug_ids[e.dst], type_labels[e.ty]
                )));
            }
        }
        Ok(Self {
            drug_ids,
            type_labels,
            features,
            edges,
        })
    }

    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    pub fn n_types(&self) -> usize {
        self.type_labels.len()
    }

    pub fn f_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn type_labels(&self) -> &[String] {
        &self.type_labels
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn positive_set(&self) -> PositiveSet {
        PositiveSet(self.edges.iter().map(|e| (e.src, e.dst, e.ty)).collect())
    }

    /// Positive examples for a list of edge indices.
    pub fn positives(&self, edge_indices: &[usize]) -> Vec<PairExample> {
        edge_indices
            .iter()
            .map(|&i| {
                let e = self.edges[i];
                PairExample {
                    d1: e.src,
                    d2: e.dst,
                    t: e.ty,
                    label: 1,
                }
            })
            .collect()
    }
}

/// Exact-triple membership over the full positive edge set.
#[derive(Debug, Clone, Default)]
pub struct PositiveSet(BTreeSet<(usize, usize, usize)>);

impl PositiveSet {
    pub fn contains(&self, d1: usize, d2: usize, t: usize) -> bool {
        self.0.contains(&(d1, d2, t))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Disjoint train/valid/test partition of edge indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// A `(d1, d2, t)` query with its label (1 interacting, 0 not).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairExample {
    pub d1: usize,
    pub d2: usize,
    pub t: usize,
    pub label: u8,
}

/// Random pair-level split. Sizes are `round(r_train·E)`,
/// `round(r_valid·E)` and the remainder.
pub fn split(dataset: &DdiDataset, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let e = dataset.edges.len();
    let mut order: Vec<usize> = (0..e).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = libm::round(ratios[0] * e as f64) as usize;
    let n_valid = (libm::round(ratios[1] * e as f64) as usize).min(e - n_train.min(e));
    let n_train = n_train.min(e);
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    Ok(Split {
        train: order,
        valid,
        test,
        seed,
    })
}

/// Attempts per negative before giving up.
pub const MAX_NEGATIVE_ATTEMPTS: usize = 1000;

/// One negative per positive: replace `d2` (or `d1`, fair coin) by a
/// uniformly drawn drug until the triple is not a known interaction.
pub fn sample_negatives(
    dataset: &DdiDataset,
    positives: &[PairExample],
    seed: u64,
) -> Result<Vec<PairExample>> {
    let known = dataset.positive_set();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_negatives_with(&known, dataset.n_drugs(), positives, &mut rng)
}

pub fn sample_negatives_with<R: Rng + ?Sized>(
    known: &PositiveSet,
    n_drugs: usize,
    positives: &[PairExample],
    rng: &mut R,
) -> Result<Vec<PairExample>> {
    if positives.is_empty() {
        return Err(Error::contract("negative sampling needs at least one positive"));
    }
    if n_drugs == 0 {
        return Err(Error::contract("negative sampling over an empty drug set"));
    }
    positives
        .iter()
        .map(|p| {
            for _ in 0..MAX_NEGATIVE_ATTEMPTS {
                let r = rng.random_range(0..n_drugs);
                let (d1, d2) = if rng.random_bool(0.5) {
                    (p.d1, r)
                } else {
                    (r, p.d2)
                };
                if !known.contains(d1, d2, p.t) {
                    return Ok(PairExample {
                        d1,
                        d2,
                        t: p.t,
                        label: 0,
                    });
                }
            }
            Err(Error::Saturated {
                attempts: MAX_NEGATIVE_ATTEMPTS,
                d1: p.d1,
                d2: p.d2,
                t: p.t,
            })
        })
        .collect()
}

/// Undirected, type-collapsed neighbourhoods built from training edges.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    adjacency: Vec<Vec<usize>>,
    neighbor_segments: Arc<Segments>,
    attention: AttentionIndex,
    edges: Vec<(usize, usize)>,
}

/// Flattened `N(i) ∪ {i}` lists used by the attention layer. Entry `k`
/// pairs target `targets[k]` with source `sources[k]`; segment `i`
/// groups the entries of target `i`, self entry first.
#[derive(Debug, Clone)]
pub struct AttentionIndex {
    pub targets: Arc<[usize]>,
    pub sources: Arc<[usize]>,
    pub segments: Arc<Segments>,
}

impl MessageGraph {
    /// Build from unordered pairs; self-loops are dropped and repeated
    /// pairs collapse to one neighbour entry.
    pub fn from_pairs(n_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            for idx in [a, b] {
                if idx >= n_nodes {
                    return Err(Error::Index {
                        what: "message graph node",
                        index: idx,
                        len: n_nodes,
                    });
                }
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut adjacency = alloc::vec![Vec::new(); n_nodes];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let neighbor_segments = Arc::new(Segments::from_lists(&adjacency));

        let mut targets = Vec::new();
        let mut sources = Vec::new();
        let mut bounds = Vec::with_capacity(n_nodes + 1);
        bounds.push(0);
        for (i, nbrs) in adjacency.iter().enumerate() {
            targets.push(i);
            sources.push(i);
            for &j in nbrs {
                targets.push(i);
                sources.push(j);
            }
            bounds.push(targets.len());
        }
        let attention = AttentionIndex {
            targets: targets.into(),
            sources: sources.into(),
            segments: Arc::new(Segments::contiguous(bounds)),
        };
        Ok(Self {
            adjacency,
            neighbor_segments,
            attention,
            edges: set.into_iter().collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn neighbor_segments(&self) -> &Arc<Segments> {
        &self.neighbor_segments
    }

    pub fn attention_index(&self) -> &AttentionIndex {
        &self.attention
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency
            .get(a)
            .is_some_and(|l| l.binary_search(&b).is_ok())
    }
}

/// Message graph over the given training edges only.
pub fn build_message_graph(dataset: &DdiDataset, train_edges: &[usize]) -> Result<MessageGraph> {
    let mut pairs = Vec::with_capacity(train_edges.len());
    for &i in train_edges {
        let e = dataset.edges.get(i).ok_or(Error::Index {
            what: "train edge index",
            index: i,
            len: dataset.edges.len(),
        })?;
        pairs.push((e.src, e.dst));
    }
    MessageGraph::from_pairs(dataset.n_drugs(), pairs)
}
