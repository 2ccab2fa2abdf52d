//! Named finite-difference checks covering every tape operation, each
//! model layer and the full training objective.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddigraph::{build_message_graph, sample_negatives_with, DdiDataset, Edge, MessageGraph, PairExample};
use crate::encoder::{encode, graphnorm, lcp_forward, mcp_forward, pair_logits, ssgattn_forward, EncoderConfig, EncoderLayout};
use crate::error::Result;
use crate::fdcheck::{finite_diff_check, FdReport};
use crate::objectives::{ce_loss, kl_loss, sample_edges, ss_loss, KlReduction};
use crate::params::{Bound, ParamStore};
use crate::tape::{Segments, Tape, Var};
use crate::tensor::Tensor;
use crate::trainer::{CadglModel, TrainConfig};
use crate::vgae::{decode, latent_encode, pair_input, predict_logits, reparameterize, Sampling, VgaeConfig, VgaeLayout};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Ndtensor,
    Encoder,
    Vgae,
    Loss,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Ndtensor, Scope::Encoder, Scope::Vgae, Scope::Loss];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Ndtensor => "ndtensor",
            Scope::Encoder => "encoder",
            Scope::Vgae => "vgae",
            Scope::Loss => "loss",
        }
    }
}

type Objective = Box<dyn Fn(&mut Tape, &Bound) -> Result<Var>>;

/// Parameters to perturb and the scalar built from them.
pub struct Case {
    pub params: ParamStore,
    pub objective: Objective,
}

pub struct Check {
    pub name: &'static str,
    pub scope: Scope,
    build: fn() -> Result<Case>,
}

impl Check {
    pub fn case(&self) -> Result<Case> {
        (self.build)()
    }

    pub fn run(&self, h: f64, tol: f64) -> Result<FdReport> {
        let case = self.case()?;
        finite_diff_check(&*case.objective, &case.params, h, tol, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub scope: Scope,
    pub report: FdReport,
}

/// Runs every registered check in `scope` (all of them for `None`).
pub fn run_checks(scope: Option<Scope>, h: f64, tol: f64) -> Result<Vec<CheckOutcome>> {
    registry()
        .iter()
        .filter(|c| scope.is_none_or(|s| s == c.scope))
        .map(|c| {
            Ok(CheckOutcome {
                name: c.name,
                scope: c.scope,
                report: c.run(h, tol)?,
            })
        })
        .collect()
}

macro_rules! checks {
    ($($scope:ident $name:literal => $build:expr,)*) => {
        &[$(Check { name: $name, scope: Scope::$scope, build: $build },)*]
    };
}

pub fn registry() -> &'static [Check] {
    checks! {
        Ndtensor "matmul" => || binary(&[3, 4], &[4, 2], Dist::Any, |t, a, b| t.matmul(a, b)),
        Ndtensor "add" => || binary(&[3, 4], &[3, 4], Dist::Any, |t, a, b| t.add(a, b)),
        Ndtensor "sub" => || binary(&[3, 4], &[3, 4], Dist::Any, |t, a, b| t.sub(a, b)),
        Ndtensor "mul" => || binary(&[3, 4], &[3, 4], Dist::Any, |t, a, b| t.mul(a, b)),
        Ndtensor "div" => || binary(&[3, 4], &[3, 4], Dist::Positive, |t, a, b| t.div(a, b)),
        Ndtensor "sigmoid" => || unary(&[3, 4], Dist::Any, |t, a| Ok(t.sigmoid(a))),
        Ndtensor "exp" => || unary(&[3, 4], Dist::Any, |t, a| Ok(t.exp(a))),
        Ndtensor "log" => || unary(&[3, 4], Dist::Positive, |t, a| t.log(a)),
        Ndtensor "sqrt" => || unary(&[3, 4], Dist::Positive, |t, a| t.sqrt(a)),
        Ndtensor "relu" => || unary(&[3, 4], Dist::AwayFromZero, |t, a| Ok(t.relu(a))),
        Ndtensor "leaky_relu" => || unary(&[3, 4], Dist::AwayFromZero, |t, a| Ok(t.leaky_relu(a, 0.2))),
        Ndtensor "scale" => || unary(&[3, 4], Dist::Any, |t, a| Ok(t.scale(a, -1.7))),
        Ndtensor "add_scalar" => || unary(&[3, 4], Dist::Any, |t, a| Ok(t.add_scalar(a, 0.3))),
        Ndtensor "clamp" => || unary(&[4, 4], Dist::AwayFromHalf, |t, a| Ok(t.clamp(a, -0.5, 0.5))),
        Ndtensor "sum" => || unary(&[3, 4], Dist::Any, |t, a| Ok(t.sum(a))),
        Ndtensor "concat_cols" => || binary(&[3, 2], &[3, 3], Dist::Any, |t, a, b| t.concat_cols(a, b)),
        Ndtensor "concat_rows" => || binary(&[2, 3], &[4, 3], Dist::Any, |t, a, b| t.concat_rows(&[a, b, a])),
        Ndtensor "gather_rows" => || unary(&[4, 3], Dist::Any, |t, a| t.gather_rows(a, Arc::from([2, 0, 2, 3]))),
        Ndtensor "repeat_rows" => || unary(&[1, 3], Dist::Any, |t, a| t.repeat_rows(a, 4)),
        Ndtensor "add_row_bias" => || binary(&[4, 3], &[1, 3], Dist::Any, |t, a, b| t.add_row_bias(a, b)),
        Ndtensor "col_mean" => || unary(&[4, 3], Dist::Any, |t, a| t.col_mean(a)),
        Ndtensor "row_sum" => || unary(&[4, 3], Dist::Any, |t, a| t.row_sum(a)),
        Ndtensor "scale_rows" => || binary(&[4, 3], &[4, 1], Dist::Any, |t, a, b| t.scale_rows(a, b)),
        Ndtensor "l2_normalize_rows" => || unary(&[3, 4], Dist::Any, |t, a| t.l2_normalize_rows(a)),
        Ndtensor "segment_sum" => || unary(&[5, 3], Dist::Any, |t, a| t.segment_sum(a, segments())),
        Ndtensor "segment_mean" => || unary(&[5, 3], Dist::Any, |t, a| t.segment_mean(a, segments())),
        Ndtensor "segment_softmax" => || unary(&[6, 1], Dist::Any, |t, a| {
            t.segment_softmax(a, Arc::new(Segments::from_lists(&[vec![0, 3], vec![1], vec![5, 2, 4]])))
        }),
        Ndtensor "bce_with_logits" => || unary(&[6, 1], Dist::Any, |t, a| {
            t.bce_with_logits(a, Arc::from([1.0, 0.0, 1.0, 1.0, 0.0, 0.0]))
        }),
        Encoder "lcp" => || encoder_case(|t, x, g, p| lcp_forward(t, x, g, &p.lcp.as_ref().unwrap().0)),
        Encoder "mcp" => || encoder_case(|t, x, g, p| mcp_forward(t, x, g, &p.mcp.as_ref().unwrap().0)),
        Encoder "graphnorm" => || encoder_case(|t, x, g, p| {
            let h = lcp_forward(t, x, g, &p.lcp.as_ref().unwrap().0)?;
            graphnorm(t, h, &p.lcp.as_ref().unwrap().1)
        }),
        Encoder "ssgattn" => || encoder_case(|t, x, g, p| {
            let h = lcp_forward(t, x, g, &p.lcp.as_ref().unwrap().0)?;
            let m = mcp_forward(t, x, g, &p.mcp.as_ref().unwrap().0)?;
            let h = t.concat_cols(h, m)?;
            Ok(ssgattn_forward(t, h, g, &p.attn)?.x_o)
        }),
        Encoder "encode" => || encoder_case(|t, x, g, p| Ok(encode(t, x, g, p)?.x_o)),
        Encoder "edge_logits" => || encoder_case(|t, x, g, p| {
            let proj = encode(t, x, g, p)?.proj;
            pair_logits(t, proj, &[(0, 1), (2, 3), (4, 5), (1, 1)])
        }),
        Vgae "latent_encode" => || vgae_case(|t, s, f, _, lat, _, _| {
            let (mu, ls) = latent_encode(t, s, f, lat)?;
            t.concat_cols(mu, ls)
        }),
        Vgae "reparameterize" => || vgae_case(|t, s, f, _, lat, _, _| {
            let (mu, ls) = latent_encode(t, s, f, lat)?;
            reparameterize(t, mu, ls, Sampling::Train(&mut ChaCha8Rng::seed_from_u64(11)))
        }),
        Vgae "decode" => || vgae_case(|t, s, f, types, lat, dec, emb| {
            let (mu, _) = latent_encode(t, s, f, lat)?;
            decode(t, mu, types, dec, emb)
        }),
        Vgae "pair_head" => || vgae_case(|t, s, f, types, lat, dec, emb| {
            let (mu, ls) = latent_encode(t, s, f, lat)?;
            let e = reparameterize(t, mu, ls, Sampling::Train(&mut ChaCha8Rng::seed_from_u64(11)))?;
            let z = decode(t, e, types, dec, emb)?;
            predict_logits(t, z, dec)
        }),
        Loss "ce" => || unary(&[5, 1], Dist::Any, |t, a| ce_loss(t, a, &[1.0, 0.0, 0.0, 1.0, 1.0])),
        Loss "kl_sum" => || binary(&[3, 4], &[3, 4], Dist::Any, |t, m, l| kl_loss(t, m, l, KlReduction::Sum)),
        Loss "kl_mean" => || binary(&[3, 4], &[3, 4], Dist::Any, |t, m, l| kl_loss(t, m, l, KlReduction::Mean)),
        Loss "ss" => || {
            let graph = toy_graph()?;
            let sample = sample_edges(&graph, 1.0, &mut ChaCha8Rng::seed_from_u64(2))?;
            let mut params = ParamStore::new();
            let id = params.insert("proj", random(&[6, 3], Dist::Any, &mut ChaCha8Rng::seed_from_u64(3)))?;
            Ok(Case {
                params,
                objective: Box::new(move |t, b| ss_loss(t, b.var(id), &sample)),
            })
        },
        Loss "cadgl_total" => cadgl_total,
    }
}

#[derive(Clone, Copy)]
enum Dist {
    /// Uniform on [-1, 1].
    Any,
    /// Uniform on [0.5, 2].
    Positive,
    /// |x| in [0.1, 1], either sign.
    AwayFromZero,
    /// Uniform on [-1, 1] but at least 0.05 from ±0.5.
    AwayFromHalf,
}

fn random(shape: &[usize], dist: Dist, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| match dist {
            Dist::Any => rng.random_range(-1.0..1.0),
            Dist::Positive => rng.random_range(0.5..2.0),
            Dist::AwayFromZero => {
                let m: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            }
            Dist::AwayFromHalf => loop {
                let v: f64 = rng.random_range(-1.0..1.0);
                if (v.abs() - 0.5).abs() > 0.05 {
                    break v;
                }
            },
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// `Σ c ⊙ v` with fixed random weights `c`, so every output entry matters.
fn weighted_sum(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let c = tape.constant(random(&shape, Dist::Any, &mut ChaCha8Rng::seed_from_u64(99)));
    let prod = tape.mul(v, c)?;
    Ok(tape.sum(prod))
}

fn unary(shape: &[usize], dist: Dist, op: fn(&mut Tape, Var) -> Result<Var>) -> Result<Case> {
    let mut params = ParamStore::new();
    let a = params.insert("a", random(shape, dist, &mut ChaCha8Rng::seed_from_u64(1)))?;
    Ok(Case {
        params,
        objective: Box::new(move |t, b| {
            let out = op(t, b.var(a))?;
            weighted_sum(t, out)
        }),
    })
}

fn binary(sa: &[usize], sb: &[usize], dist: Dist, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamStore::new();
    let a = params.insert("a", random(sa, Dist::Any, &mut rng))?;
    let b = params.insert("b", random(sb, dist, &mut rng))?;
    Ok(Case {
        params,
        objective: Box::new(move |t, bound| {
            let out = op(t, bound.var(a), bound.var(b))?;
            weighted_sum(t, out)
        }),
    })
}

/// Repeated, empty and singleton segments over five rows.
fn segments() -> Arc<Segments> {
    Arc::new(Segments::from_lists(&[vec![0, 1], vec![], vec![4], vec![2, 3, 2]]))
}

/// 6 nodes: a triangle with a tail and one isolated node.
fn toy_graph() -> Result<MessageGraph> {
    MessageGraph::from_pairs(6, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)])
}

/// Moves every parameter away from its structured initial value.
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn encoder_case(
    head: fn(&mut Tape, Var, &MessageGraph, &crate::encoder::EncoderParams) -> Result<Var>,
) -> Result<Case> {
    let graph = toy_graph()?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamStore::new();
    let x = params.insert("x", random(&[6, 3], Dist::Any, &mut rng))?;
    let config = EncoderConfig {
        d_in: 3,
        d_hid: 4,
        d_out: 3,
        max_degree_bucket: 2,
        leaky_slope: 0.2,
        graphnorm_eps: 1e-5,
        use_lcp: true,
        use_mcp: true,
    };
    let layout = EncoderLayout::init(&mut params, &config, &mut rng)?;
    jitter(&mut params, 6);
    Ok(Case {
        params,
        objective: Box::new(move |t, b| {
            let out = head(t, b.var(x), &graph, &layout.bind(b))?;
            weighted_sum(t, out)
        }),
    })
}

type VgaeHead = fn(&mut Tape, Var, Var, &[usize], &crate::vgae::LatentParams, &crate::vgae::DecoderParams, Var) -> Result<Var>;

fn vgae_case(head: VgaeHead) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamStore::new();
    let x_o = params.insert("x_o", random(&[4, 3], Dist::Any, &mut rng))?;
    let x_f = params.insert("x_f", random(&[4, 2], Dist::Any, &mut rng))?;
    let config = VgaeConfig {
        struct_dim: 3,
        f_dim: 2,
        latent_dim: 3,
        t_dim: 2,
        n_types: 3,
        decoder_hidden: vec![5, 4],
    };
    let layout = VgaeLayout::init(&mut params, &config, &mut rng)?;
    jitter(&mut params, 8);
    let pairs = [(0, 1), (1, 0), (2, 3), (3, 3), (1, 2)];
    let types = [0, 2, 1, 1, 0];
    Ok(Case {
        params,
        objective: Box::new(move |t, b| {
            let (s, f) = pair_input(t, b.var(x_o), b.var(x_f), &pairs)?;
            let (lat, dec, emb) = layout.bind(b);
            let out = head(t, s, f, &types, &lat, &dec, emb)?;
            weighted_sum(t, out)
        }),
    })
}

/// The complete training objective of a small model on a 6-drug graph with
/// the reparameterization noise and all samples held fixed.
fn cadgl_total() -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let edges = [(0, 1, 0), (1, 2, 1), (2, 0, 0), (2, 3, 1), (3, 4, 0), (1, 0, 1), (4, 5, 1)];
    let dataset = DdiDataset::new(
        (0..6).map(|i| alloc::format!("D{i}")).collect(),
        vec!["a".into(), "b".into()],
        random(&[6, 3], Dist::Any, &mut rng),
        edges.iter().map(|&(src, dst, ty)| Edge { src, dst, ty }).collect(),
    )?;
    let train: Vec<usize> = (0..6).collect();
    let graph = build_message_graph(&dataset, &train)?;
    let pos = dataset.positives(&train);
    let neg = sample_negatives_with(&dataset.positive_set(), 6, &pos, &mut rng)?;
    let batch: Vec<PairExample> = pos.into_iter().chain(neg).collect();
    let sample = sample_edges(&graph, 0.8, &mut rng)?;
    let config = TrainConfig {
        latent_dim: 3,
        d_hid: 4,
        d_out: 3,
        t_dim: 2,
        decoder_hidden: vec![5, 4],
        max_degree_bucket: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut model = CadglModel::new(&config, 3, 2)?;
    jitter(model.params_mut(), 14);
    let params = model.params().clone();
    let features = dataset.features().clone();
    Ok(Case {
        params,
        objective: Box::new(move |t, b| {
            let mut noise = ChaCha8Rng::seed_from_u64(15);
            let terms = model.loss_terms(t, b, &features, &graph, &batch, &sample, &mut noise)?;
            Ok(terms.total)
        }),
    })
}
