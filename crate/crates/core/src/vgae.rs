//! Latent information encoder and MLP decoder over drug pairs.
//!
//! For an ordered pair `(d1, d2)` of type `t`:
//!
//! ```text
//! s  = x_o[d1] ‖ x_o[d2]            p  = X_f[d1] ‖ X_f[d2]
//! μ  = W_μ [Ψ(s) ‖ Ψ(p)]            log σ = W_σ [Ψ(s) ‖ Ψ(p)]
//! e  = μ + ε ⊙ exp(0.5 · log σ)     (ε ~ N(0, I) in training, 0 in eval)
//! Z  = MLP(e ‖ emb[t])              z = FCL(Z),  p = σ(z)
//! ```
//!
//! Ψ scales each vector to unit L2 norm. Matrices act on row vectors, so a
//! batch of pairs is a matrix with one pair per row.

use alloc::format;
use core::f64::consts::FRAC_1_SQRT_2;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `log σ` is clamped to this range before use.
pub const LOG_SIGMA_CLAMP: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgaeConfig {
    /// Width of one node embedding `x_o[i]`.
    pub struct_dim: usize,
    /// Width of one property row `X_f[i]`.
    pub f_dim: usize,
    pub latent_dim: usize,
    pub t_dim: usize,
    pub n_types: usize,
    /// Hidden widths of the decoder MLP.
    pub decoder_hidden: Vec<usize>,
}

pub struct LatentParams {
    pub w_mu: Var,
    pub w_sigma: Var,
}

pub struct DecoderParams {
    /// `(weight [in × out], bias [1 × out])`, ReLU after each layer.
    pub mlp_layers: Vec<(Var, Var)>,
    /// Final fully connected layer to a scalar.
    pub fcl: (Var, Var),
}

/// How `e` is drawn from `(μ, log σ)`.
pub enum Sampling<'a> {
    /// `e = μ`.
    Eval,
    /// `e = μ + ε ⊙ exp(0.5 · log σ)`, ε drawn row-major from the generator.
    Train(&'a mut dyn RngCore),
}

/// Structural and property pair matrices for a batch of ordered pairs.
pub fn pair_input(
    tape: &mut Tape,
    x_o: Var,
    x_f: Var,
    pairs: &[(usize, usize)],
) -> Result<(Var, Var)> {
    let n = tape.value(x_o).dims2()?.0;
    let nf = tape.value(x_f).dims2()?.0;
    for &(a, b) in pairs {
        for (idx, len) in [(a, n), (b, n), (a, nf), (b, nf)] {
            if idx >= len {
                return Err(Error::Index {
                    what: "pair drug index",
                    index: idx,
                    len,
                });
            }
        }
    }
    let left: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let right: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let s1 = tape.gather_rows(x_o, left.clone())?;
    let s2 = tape.gather_rows(x_o, right.clone())?;
    let f1 = tape.gather_rows(x_f, left)?;
    let f2 = tape.gather_rows(x_f, right)?;
    Ok((tape.concat_cols(s1, s2)?, tape.concat_cols(f1, f2)?))
}

/// `(μ, log σ)` from L2-normalised structural and property rows.
pub fn latent_encode(tape: &mut Tape, struct_pair: Var, prop_pair: Var, p: &LatentParams) -> Result<(Var, Var)> {
    let s = tape.l2_normalize_rows(struct_pair)?;
    let f = tape.l2_normalize_rows(prop_pair)?;
    let joint = tape.concat_cols(s, f)?;
    let mu = tape.matmul(joint, p.w_mu)?;
    let log_sigma = tape.matmul(joint, p.w_sigma)?;
    Ok((mu, log_sigma))
}

pub fn clamp_log_sigma(tape: &mut Tape, log_sigma: Var) -> Var {
    tape.clamp(log_sigma, LOG_SIGMA_CLAMP.0, LOG_SIGMA_CLAMP.1)
}

pub fn reparameterize(tape: &mut Tape, mu: Var, log_sigma: Var, mode: Sampling<'_>) -> Result<Var> {
    let (ms, ls) = (tape.value(mu).shape(), tape.value(log_sigma).shape());
    if ms != ls {
        return Err(Error::dim("reparameterize", ms, ls));
    }
    let rng = match mode {
        Sampling::Eval => return Ok(mu),
        Sampling::Train(rng) => rng,
    };
    let shape = ms.to_vec();
    let n: usize = shape.iter().product();
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let eps = tape.constant(Tensor::new(&shape, noise)?);
    let clamped = clamp_log_sigma(tape, log_sigma);
    let half = tape.scale(clamped, 0.5);
    let std = tape.exp(half);
    let spread = tape.mul(eps, std)?;
    tape.add(mu, spread)
}

/// `Z = MLP(e ‖ emb[t])`.
pub fn decode(tape: &mut Tape, e: Var, types: &[usize], p: &DecoderParams, type_emb: Var) -> Result<Var> {
    let n_types = tape.value(type_emb).dims2()?.0;
    if let Some(&bad) = types.iter().find(|&&t| t >= n_types) {
        return Err(Error::Index {
            what: "interaction type",
            index: bad,
            len: n_types,
        });
    }
    let rows = tape.value(e).dims2()?.0;
    if rows != types.len() {
        return Err(Error::dim("decode", tape.value(e).shape(), &[types.len()]));
    }
    let emb = tape.gather_rows(type_emb, types.iter().copied().collect())?;
    let mut h = tape.concat_cols(e, emb)?;
    for &(w, b) in &p.mlp_layers {
        let lin = tape.matmul(h, w)?;
        let lin = tape.add_row_bias(lin, b)?;
        h = tape.relu(lin);
    }
    Ok(h)
}

/// Classifier logits `z = FCL(Z)`, `[B × 1]`; probabilities are `σ(z)`.
pub fn predict_logits(tape: &mut Tape, z_hidden: Var, p: &DecoderParams) -> Result<Var> {
    let (w, b) = p.fcl;
    let lin = tape.matmul(z_hidden, w)?;
    tape.add_row_bias(lin, b)
}

/// Where the latent encoder and decoder parameters live.
pub struct VgaeLayout {
    config: VgaeConfig,
    w_mu: ParamId,
    w_sigma: ParamId,
    type_emb: ParamId,
    mlp: Vec<(ParamId, ParamId)>,
    fcl: (ParamId, ParamId),
}

impl VgaeLayout {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, config: &VgaeConfig, rng: &mut R) -> Result<Self> {
        let c = config;
        if c.latent_dim == 0 || c.n_types == 0 {
            return Err(Error::contract("latent_dim and n_types must be positive"));
        }
        let joint = 2 * c.struct_dim + 2 * c.f_dim;
        // unit-variance means on the two unit-norm halves; log σ starts at 0
        let w_mu = store.insert_normal("latent.w_mu", joint, c.latent_dim, FRAC_1_SQRT_2, rng)?;
        let w_sigma = store.insert("latent.w_sigma", Tensor::zeros(&[joint, c.latent_dim]))?;
        let type_emb = store.insert_glorot("decoder.type_emb", c.n_types, c.t_dim, rng)?;
        let mut mlp = Vec::new();
        let mut width = c.latent_dim + c.t_dim;
        for (k, &out) in c.decoder_hidden.iter().enumerate() {
            let w = store.insert_glorot(format!("decoder.mlp.{k}.w"), width, out, rng)?;
            let b = store.insert(format!("decoder.mlp.{k}.b"), Tensor::zeros(&[1, out]))?;
            mlp.push((w, b));
            width = out;
        }
        let fw = store.insert_glorot("decoder.fcl.w", width, 1, rng)?;
        let fb = store.insert("decoder.fcl.b", Tensor::zeros(&[1, 1]))?;
        Ok(Self {
            config: config.clone(),
            w_mu,
            w_sigma,
            type_emb,
            mlp,
            fcl: (fw, fb),
        })
    }

    pub fn config(&self) -> &VgaeConfig {
        &self.config
    }

    pub fn bind(&self, bound: &Bound) -> (LatentParams, DecoderParams, Var) {
        (
            LatentParams {
                w_mu: bound.var(self.w_mu),
                w_sigma: bound.var(self.w_sigma),
            },
            DecoderParams {
                mlp_layers: self
                    .mlp
                    .iter()
                    .map(|&(w, b)| (bound.var(w), bound.var(b)))
                    .collect(),
                fcl: (bound.var(self.fcl.0), bound.var(self.fcl.1)),
            },
            bound.var(self.type_emb),
        )
    }
}
