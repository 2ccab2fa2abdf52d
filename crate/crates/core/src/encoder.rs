//! Context-aware graph encoder.
//!
//! Two context processors feed the attention layer:
//!
//! * the local context processor (LCP) mixes each node with the mean of its
//!   neighbours through one shared matrix, `h_i = W x_i + W·mean_j x_j`;
//! * the molecular context processor (MCP) picks a pair of matrices by node
//!   degree, `h_i = W1[deg i] x_i + W2[deg i] Σ_j x_j`, clamping degrees into
//!   the top bucket.
//!
//! Each processor output is GraphNorm-ed, the two are concatenated, and the
//! self-supervised max-attention layer aggregates over `N(i) ∪ {i}` with
//! scores `aᵀ[W_s h_i ‖ W_s h_j] · σ((W_s h_i)ᵀ W_s h_j)`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddigraph::MessageGraph;
use crate::error::{Error, Result};
use crate::math;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub d_hid: usize,
    pub d_out: usize,
    pub max_degree_bucket: usize,
    pub leaky_slope: f64,
    pub graphnorm_eps: f64,
    pub use_lcp: bool,
    pub use_mcp: bool,
}

impl EncoderConfig {
    /// Width of the concatenated processor output fed to attention.
    pub fn concat_width(&self) -> usize {
        self.d_hid * (self.use_lcp as usize + self.use_mcp as usize)
    }
}

pub struct LcpParams {
    pub w: Var,
}

pub struct McpParams {
    pub w1: Vec<Var>,
    pub w2: Vec<Var>,
    pub max_degree_bucket: usize,
}

pub struct GraphNormParams {
    pub zeta: Var,
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

pub struct SsgAttnParams {
    pub ws: Var,
    pub a: Var,
    pub leaky_slope: f64,
}

/// Encoder parameters bound onto a tape.
pub struct EncoderParams {
    pub lcp: Option<(LcpParams, GraphNormParams)>,
    pub mcp: Option<(McpParams, GraphNormParams)>,
    pub attn: SsgAttnParams,
}

pub struct EncoderOutput {
    /// Node embeddings `x_o`, `[n × d_out]`.
    pub x_o: Var,
    /// Projected inputs `W_s h`, `[n × d_out]`; edge logits are dot products
    /// of its rows.
    pub proj: Var,
    /// Attention weights over the entries of the message graph's
    /// attention index, `[E × 1]`.
    pub attention: Var,
    /// `φ_ij = σ((W_s h_i)ᵀ W_s h_j)` for every message-graph edge, in
    /// [`MessageGraph::edges`] order.
    pub edge_prob: Vec<f64>,
}

pub fn lcp_forward(tape: &mut Tape, x: Var, mg: &MessageGraph, p: &LcpParams) -> Result<Var> {
    check_rows(tape, x, mg)?;
    let mean = tape.segment_mean(x, mg.neighbor_segments().clone())?;
    let self_and_mean = tape.add(x, mean)?;
    tape.matmul(self_and_mean, p.w)
}

/// Weight bucket for a node of the given degree.
pub fn degree_bucket(degree: usize, max_degree_bucket: usize) -> usize {
    degree.min(max_degree_bucket)
}

pub fn mcp_forward(tape: &mut Tape, x: Var, mg: &MessageGraph, p: &McpParams) -> Result<Var> {
    check_rows(tape, x, mg)?;
    let n_buckets = p.max_degree_bucket + 1;
    if p.w1.len() != n_buckets || p.w2.len() != n_buckets {
        return Err(Error::contract(format!(
            "MCP expects {n_buckets} weight buckets, got {} and {}",
            p.w1.len(),
            p.w2.len()
        )));
    }
    let sums = tape.segment_sum(x, mg.neighbor_segments().clone())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_buckets];
    for i in 0..mg.n_nodes() {
        members[degree_bucket(mg.degree(i), p.max_degree_bucket)].push(i);
    }
    let mut parts = Vec::new();
    let mut position = vec![0usize; mg.n_nodes()];
    let mut offset = 0;
    for (b, nodes) in members.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        for (k, &i) in nodes.iter().enumerate() {
            position[i] = offset + k;
        }
        offset += nodes.len();
        let idx: Arc<[usize]> = nodes.as_slice().into();
        let xb = tape.gather_rows(x, idx.clone())?;
        let sb = tape.gather_rows(sums, idx)?;
        let own = tape.matmul(xb, p.w1[b])?;
        let nbr = tape.matmul(sb, p.w2[b])?;
        parts.push(tape.add(own, nbr)?);
    }
    if parts.is_empty() {
        let d = tape.value(p.w1[0]).dims2()?.1;
        return Ok(tape.constant(Tensor::zeros(&[0, d])));
    }
    let stacked = tape.concat_rows(&parts)?;
    tape.gather_rows(stacked, position.into())
}

/// GraphNorm over the node axis:
/// `(x − ζ⊙E[x]) / sqrt(Var[x − ζ⊙E[x]] + ε) ⊙ γ + β`, population variance.
pub fn graphnorm(tape: &mut Tape, h: Var, p: &GraphNormParams) -> Result<Var> {
    let (n, _) = tape.value(h).dims2()?;
    if n == 0 {
        return Err(Error::contract("graphnorm over zero nodes"));
    }
    let mean = tape.col_mean(h)?;
    let shift = tape.mul(p.zeta, mean)?;
    let shift = tape.repeat_rows(shift, n)?;
    let centered = tape.sub(h, shift)?;
    let c_mean = tape.col_mean(centered)?;
    let c_mean = tape.repeat_rows(c_mean, n)?;
    let dev = tape.sub(centered, c_mean)?;
    let sq = tape.mul(dev, dev)?;
    let var = tape.col_mean(sq)?;
    let var = tape.add_scalar(var, p.eps);
    let std = tape.sqrt(var)?;
    let std = tape.repeat_rows(std, n)?;
    let normed = tape.div(centered, std)?;
    let gamma = tape.repeat_rows(p.gamma, n)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add_row_bias(scaled, p.beta)
}

pub fn ssgattn_forward(tape: &mut Tape, h: Var, mg: &MessageGraph, p: &SsgAttnParams) -> Result<EncoderOutput> {
    check_rows(tape, h, mg)?;
    let idx = mg.attention_index();
    let proj = tape.matmul(h, p.ws)?;
    let yi = tape.gather_rows(proj, idx.targets.clone())?;
    let yj = tape.gather_rows(proj, idx.sources.clone())?;
    let pair = tape.concat_cols(yi, yj)?;
    let linear = tape.matmul(pair, p.a)?;
    let prod = tape.mul(yi, yj)?;
    let dot = tape.row_sum(prod)?;
    let gate = tape.sigmoid(dot);
    let score = tape.mul(linear, gate)?;
    let act = tape.leaky_relu(score, p.leaky_slope);
    let attention = tape.segment_softmax(act, idx.segments.clone())?;
    let weighted = tape.scale_rows(yj, attention)?;
    let x_o = tape.segment_sum(weighted, idx.segments.clone())?;

    let y = tape.value(proj);
    let edge_prob = mg
        .edges()
        .iter()
        .map(|&(i, j)| math::sigmoid(y.row(i).iter().zip(y.row(j)).map(|(a, b)| a * b).sum()))
        .collect();
    Ok(EncoderOutput {
        x_o,
        proj,
        attention,
        edge_prob,
    })
}

/// Full encoder: processors, GraphNorm, concatenation, attention.
pub fn encode(tape: &mut Tape, x: Var, mg: &MessageGraph, p: &EncoderParams) -> Result<EncoderOutput> {
    let lcp = match &p.lcp {
        Some((lp, gn)) => {
            let h = lcp_forward(tape, x, mg, lp)?;
            Some(graphnorm(tape, h, gn)?)
        }
        None => None,
    };
    let mcp = match &p.mcp {
        Some((mp, gn)) => {
            let h = mcp_forward(tape, x, mg, mp)?;
            Some(graphnorm(tape, h, gn)?)
        }
        None => None,
    };
    let h = match (lcp, mcp) {
        (Some(l), Some(m)) => tape.concat_cols(l, m)?,
        (Some(l), None) => l,
        (None, Some(m)) => m,
        (None, None) => {
            return Err(Error::contract("encoder needs at least one context processor"));
        }
    };
    ssgattn_forward(tape, h, mg, &p.attn)
}

/// Logits `(W_s h_i)ᵀ W_s h_j` for a batch of node pairs, `[m × 1]`.
pub fn pair_logits(tape: &mut Tape, proj: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let left: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let right: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let a = tape.gather_rows(proj, left)?;
    let b = tape.gather_rows(proj, right)?;
    let prod = tape.mul(a, b)?;
    tape.row_sum(prod)
}

fn check_rows(tape: &Tape, x: Var, mg: &MessageGraph) -> Result<()> {
    let t = tape.value(x);
    let (n, _) = t.dims2()?;
    if n != mg.n_nodes() {
        return Err(Error::dim("encoder input rows", t.shape(), &[mg.n_nodes()]));
    }
    Ok(())
}

struct GraphNormIds {
    zeta: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

/// Where the encoder's parameters live in a [`ParamStore`].
pub struct EncoderLayout {
    config: EncoderConfig,
    lcp: Option<(ParamId, GraphNormIds)>,
    mcp: Option<(Vec<ParamId>, Vec<ParamId>, GraphNormIds)>,
    ws: ParamId,
    a: ParamId,
}

fn init_graphnorm(store: &mut ParamStore, prefix: &str, d: usize) -> Result<GraphNormIds> {
    Ok(GraphNormIds {
        zeta: store.insert(format!("{prefix}.zeta"), Tensor::full(&[1, d], 1.0))?,
        gamma: store.insert(format!("{prefix}.gamma"), Tensor::full(&[1, d], 1.0))?,
        beta: store.insert(format!("{prefix}.beta"), Tensor::zeros(&[1, d]))?,
    })
}

impl EncoderLayout {
    /// Register freshly initialised encoder parameters.
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        if !config.use_lcp && !config.use_mcp {
            return Err(Error::contract("encoder needs at least one context processor"));
        }
        let c = config;
        let lcp = if c.use_lcp {
            let w = store.insert_glorot("lcp.w", c.d_in, c.d_hid, rng)?;
            Some((w, init_graphnorm(store, "lcp.norm", c.d_hid)?))
        } else {
            None
        };
        let mcp = if c.use_mcp {
            let mut w1 = Vec::new();
            let mut w2 = Vec::new();
            for b in 0..=c.max_degree_bucket {
                w1.push(store.insert_glorot(format!("mcp.w1.{b}"), c.d_in, c.d_hid, rng)?);
                w2.push(store.insert_glorot(format!("mcp.w2.{b}"), c.d_in, c.d_hid, rng)?);
            }
            Some((w1, w2, init_graphnorm(store, "mcp.norm", c.d_hid)?))
        } else {
            None
        };
        let ws = store.insert_glorot("attn.ws", c.concat_width(), c.d_out, rng)?;
        let a = store.insert_glorot("attn.a", 2 * c.d_out, 1, rng)?;
        Ok(Self {
            config: config.clone(),
            lcp,
            mcp,
            ws,
            a,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn bind(&self, bound: &Bound) -> EncoderParams {
        let gn = |ids: &GraphNormIds| GraphNormParams {
            zeta: bound.var(ids.zeta),
            gamma: bound.var(ids.gamma),
            beta: bound.var(ids.beta),
            eps: self.config.graphnorm_eps,
        };
        EncoderParams {
            lcp: self
                .lcp
                .as_ref()
                .map(|(w, ids)| (LcpParams { w: bound.var(*w) }, gn(ids))),
            mcp: self.mcp.as_ref().map(|(w1, w2, ids)| {
                (
                    McpParams {
                        w1: w1.iter().map(|&id| bound.var(id)).collect(),
                        w2: w2.iter().map(|&id| bound.var(id)).collect(),
                        max_degree_bucket: self.config.max_degree_bucket,
                    },
                    gn(ids),
                )
            }),
            attn: SsgAttnParams {
                ws: bound.var(self.ws),
                a: bound.var(self.a),
                leaky_slope: self.config.leaky_slope,
            },
        }
    }
}
