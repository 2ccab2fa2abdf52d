//! Model assembly, the full-batch training loop, evaluation and ranking.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddigraph::{build_message_graph, sample_negatives_with, DdiDataset, MessageGraph, PairExample, PositiveSet, Split};
use crate::encoder::{encode, EncoderConfig, EncoderLayout, EncoderOutput};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{evaluate_scores, Metrics, MetricsSummary};
use crate::objectives::{ce_loss, kl_loss, sample_edges, ss_loss, total_loss, EdgeSample, KlReduction, LossBreakdown};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vgae::{clamp_log_sigma, decode, latent_encode, pair_input, predict_logits, reparameterize, Sampling, VgaeConfig, VgaeLayout};

// ChaCha stream ids; each epoch seeds one generator and splits it by purpose.
const STREAM_INIT: u64 = 0;
const STREAM_CE_NEGATIVES: u64 = 1;
const STREAM_EDGE_SAMPLE: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_VALID: u64 = 4;
const STREAM_TEST: u64 = 5;
const STREAM_TRAIN_EVAL: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub d_hid: usize,
    pub d_out: usize,
    pub t_dim: usize,
    pub p_e: f64,
    pub max_degree_bucket: usize,
    pub leaky_slope: f64,
    pub graphnorm_eps: f64,
    pub kl_reduction: KlReduction,
    pub decoder_hidden: Vec<usize>,
    pub use_lcp: bool,
    pub use_mcp: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 300,
            seed: 0,
            latent_dim: 64,
            d_hid: 64,
            d_out: 64,
            t_dim: 32,
            p_e: 0.8,
            max_degree_bucket: 16,
            leaky_slope: 0.2,
            graphnorm_eps: 1e-5,
            kl_reduction: KlReduction::Mean,
            decoder_hidden: vec![128, 64],
            use_lcp: true,
            use_mcp: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::contract(format!("train config: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !self.use_lcp && !self.use_mcp {
            return fail("at least one of use_lcp and use_mcp must be enabled");
        }
        if self.latent_dim == 0 || self.d_hid == 0 || self.d_out == 0 {
            return fail("layer widths must be positive");
        }
        if self.decoder_hidden.iter().any(|&w| w == 0) {
            return fail("decoder widths must be positive");
        }
        if !(self.p_e > 0.0 && self.p_e <= 1.0) {
            return fail("p_e must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.graphnorm_eps > 0.0) {
            return fail("eps values must be positive");
        }
        if !(self.leaky_slope >= 0.0) {
            return fail("leaky_slope must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

fn epoch_rng(seed: u64, epoch: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch);
    rng.set_stream(stream);
    rng
}

/// Parameters plus the layouts that give them meaning.
pub struct CadglModel {
    config: TrainConfig,
    f_dim: usize,
    n_types: usize,
    store: ParamStore,
    encoder: EncoderLayout,
    vgae: VgaeLayout,
}

struct PairHead {
    mu: Var,
    log_sigma: Var,
    logits: Var,
}

impl CadglModel {
    /// Freshly initialised model; initialisation depends only on `config.seed`.
    pub fn new(config: &TrainConfig, f_dim: usize, n_types: usize) -> Result<Self> {
        config.validate()?;
        if f_dim == 0 || n_types == 0 {
            return Err(Error::contract("model needs positive f_dim and n_types"));
        }
        let mut rng = epoch_rng(config.seed, 0, STREAM_INIT);
        let mut store = ParamStore::new();
        let enc_cfg = EncoderConfig {
            d_in: f_dim,
            d_hid: config.d_hid,
            d_out: config.d_out,
            max_degree_bucket: config.max_degree_bucket,
            leaky_slope: config.leaky_slope,
            graphnorm_eps: config.graphnorm_eps,
            use_lcp: config.use_lcp,
            use_mcp: config.use_mcp,
        };
        let encoder = EncoderLayout::init(&mut store, &enc_cfg, &mut rng)?;
        let vgae_cfg = VgaeConfig {
            struct_dim: config.d_out,
            f_dim,
            latent_dim: config.latent_dim,
            t_dim: config.t_dim,
            n_types,
            decoder_hidden: config.decoder_hidden.clone(),
        };
        let vgae = VgaeLayout::init(&mut store, &vgae_cfg, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            f_dim,
            n_types,
            store,
            encoder,
            vgae,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn f_dim(&self) -> usize {
        self.f_dim
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_inputs(&self, features: &Tensor, graph: &MessageGraph) -> Result<()> {
        let (n, f) = features.dims2()?;
        if f != self.f_dim || n != graph.n_nodes() {
            return Err(Error::dim("model input", features.shape(), &[graph.n_nodes(), self.f_dim]));
        }
        Ok(())
    }

    fn pair_head(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        enc: &EncoderOutput,
        x_f: Var,
        pairs: &[PairExample],
        sampling: Sampling<'_>,
    ) -> Result<PairHead> {
        if let Some(p) = pairs.iter().find(|p| p.t >= self.n_types) {
            return Err(Error::Index {
                what: "interaction type",
                index: p.t,
                len: self.n_types,
            });
        }
        let (latent, decoder, type_emb) = self.vgae.bind(bound);
        let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.d1, p.d2)).collect();
        let types: Vec<usize> = pairs.iter().map(|p| p.t).collect();
        let (s, f) = pair_input(tape, enc.x_o, x_f, &idx)?;
        let (mu, raw_log_sigma) = latent_encode(tape, s, f, &latent)?;
        let log_sigma = clamp_log_sigma(tape, raw_log_sigma);
        let e = reparameterize(tape, mu, log_sigma, sampling)?;
        let z = decode(tape, e, &types, &decoder, type_emb)?;
        let logits = predict_logits(tape, z, &decoder)?;
        Ok(PairHead { mu, log_sigma, logits })
    }

    /// The train-mode objective on one batch, ε drawn from `noise`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_terms(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        features: &Tensor,
        graph: &MessageGraph,
        batch: &[PairExample],
        edges: &EdgeSample,
        noise: &mut dyn RngCore,
    ) -> Result<LossTerms> {
        self.check_inputs(features, graph)?;
        let labels: Vec<f64> = batch.iter().map(|p| p.label as f64).collect();
        let x = tape.constant(features.clone());
        let enc = encode(tape, x, graph, &self.encoder.bind(bound))?;
        let head = self.pair_head(tape, bound, &enc, x, batch, Sampling::Train(noise))?;
        let ce = ce_loss(tape, head.logits, &labels)?;
        let kl = kl_loss(tape, head.mu, head.log_sigma, self.config.kl_reduction)?;
        let ss = ss_loss(tape, enc.proj, edges)?;
        let ce_kl = tape.add(ce, kl)?;
        let total = tape.add(ce_kl, ss)?;
        Ok(LossTerms { ce, kl, ss, total })
    }

    /// Eval-mode probabilities for `(d1, d2, t)` queries.
    pub fn predict(&self, features: &Tensor, graph: &MessageGraph, pairs: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
        let examples: Vec<PairExample> = pairs
            .iter()
            .map(|&(d1, d2, t)| PairExample { d1, d2, t, label: 0 })
            .collect();
        Ok(self.eval_pass(features, graph, &[&examples])?.remove(0).probs)
    }

    /// One frozen encoder pass scoring several pair groups.
    fn eval_pass(&self, features: &Tensor, graph: &MessageGraph, groups: &[&[PairExample]]) -> Result<Vec<GroupEval>> {
        self.check_inputs(features, graph)?;
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let x = tape.constant(features.clone());
        let enc = encode(&mut tape, x, graph, &self.encoder.bind(&bound))?;
        let mut out = Vec::with_capacity(groups.len());
        for pairs in groups {
            if pairs.is_empty() {
                out.push(GroupEval::default());
                continue;
            }
            let head = self.pair_head(&mut tape, &bound, &enc, x, pairs, Sampling::Eval)?;
            let labels: Vec<f64> = pairs.iter().map(|p| p.label as f64).collect();
            let ce = ce_loss(&mut tape, head.logits, &labels)?;
            let kl = kl_loss(&mut tape, head.mu, head.log_sigma, self.config.kl_reduction)?;
            let probs = tape.value(head.logits).data().iter().map(|&z| math::sigmoid(z)).collect();
            out.push(GroupEval {
                probs,
                loss: tape.scalar(ce)? + tape.scalar(kl)?,
            });
        }
        Ok(out)
    }
}

/// Tape nodes of the three objective terms and their sum.
pub struct LossTerms {
    pub ce: Var,
    pub kl: Var,
    pub ss: Var,
    pub total: Var,
}

#[derive(Default)]
struct GroupEval {
    probs: Vec<f64>,
    /// Eval-mode CE + KL.
    loss: f64,
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub kl: f64,
    pub ss: f64,
    pub total: f64,
    pub val_accuracy: Option<f64>,
    pub val_auroc: Option<f64>,
    pub val_auprc: Option<f64>,
    pub val_f1: Option<f64>,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
}

impl EpochRecord {
    pub fn losses(&self) -> LossBreakdown {
        LossBreakdown {
            ce: self.ce,
            kl: self.kl,
            ss: self.ss,
            total: self.total,
        }
    }
}

/// Everything a training run leaves behind.
pub struct TrainedModel {
    pub model: CadglModel,
    pub optimizer: Adam,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters `model` holds.
    pub best_epoch: usize,
    pub split: Split,
}

/// Positives of `indices` followed by one corrupted negative each.
pub fn labelled_pairs(dataset: &DdiDataset, known: &PositiveSet, indices: &[usize], seed: u64, stream: u64) -> Result<Vec<PairExample>> {
    let pos = dataset.positives(indices);
    if pos.is_empty() {
        return Ok(pos);
    }
    let mut rng = epoch_rng(seed, 0, stream);
    let neg = sample_negatives_with(known, dataset.n_drugs(), &pos, &mut rng)?;
    Ok(pos.into_iter().chain(neg).collect())
}

/// One part of a [`Split`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Valid,
    Test,
}

/// Fixed labelled pairs for one part of a split; negatives depend only on
/// `split.seed` and the part.
pub fn split_pairs(dataset: &DdiDataset, split: &Split, part: SplitPart) -> Result<Vec<PairExample>> {
    let (indices, stream) = match part {
        SplitPart::Train => (&split.train, STREAM_TRAIN_EVAL),
        SplitPart::Valid => (&split.valid, STREAM_VALID),
        SplitPart::Test => (&split.test, STREAM_TEST),
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.edges().len()) {
        return Err(Error::Index {
            what: "split edge index",
            index: bad,
            len: dataset.edges().len(),
        });
    }
    labelled_pairs(dataset, &dataset.positive_set(), indices, split.seed, stream)
}

pub fn validation_pairs(dataset: &DdiDataset, split: &Split) -> Result<Vec<PairExample>> {
    split_pairs(dataset, split, SplitPart::Valid)
}

pub fn test_pairs(dataset: &DdiDataset, split: &Split) -> Result<Vec<PairExample>> {
    split_pairs(dataset, split, SplitPart::Test)
}

fn labels_of(pairs: &[PairExample]) -> Vec<u8> {
    pairs.iter().map(|p| p.label).collect()
}

/// Full-batch training; the returned model holds the parameters of the
/// epoch with the best validation AUROC (the last epoch if none is defined).
pub fn train(dataset: &DdiDataset, split: &Split, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(dataset, split, config, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with<F: FnMut(&EpochRecord)>(dataset: &DdiDataset, split: &Split, config: &TrainConfig, mut on_epoch: F) -> Result<TrainedModel> {
    config.validate()?;
    let train_pos = dataset.positives(&split.train);
    if train_pos.is_empty() {
        return Err(Error::contract("training split has no interactions"));
    }
    let graph = build_message_graph(dataset, &split.train)?;
    let known = dataset.positive_set();
    let valid = validation_pairs(dataset, split)?;
    let valid_labels = labels_of(&valid);
    let mut model = CadglModel::new(config, dataset.f_dim(), dataset.n_types())?;
    let mut optimizer = Adam::new(config.adam(), &model.store);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        let negatives = sample_negatives_with(&known, dataset.n_drugs(), &train_pos, &mut epoch_rng(config.seed, e, STREAM_CE_NEGATIVES))?;
        let batch: Vec<PairExample> = train_pos.iter().copied().chain(negatives).collect();
        let edge_sample = sample_edges(&graph, config.p_e, &mut epoch_rng(config.seed, e, STREAM_EDGE_SAMPLE))?;
        let mut noise = epoch_rng(config.seed, e, STREAM_NOISE);

        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let terms = model.loss_terms(&mut tape, &bound, dataset.features(), &graph, &batch, &edge_sample, &mut noise)?;
        let losses = total_loss(tape.scalar(terms.ce)?, tape.scalar(terms.kl)?, tape.scalar(terms.ss)?, epoch)?;
        tape.backward(terms.total)?;
        let grads = model.store.grads(&tape, &bound);
        if let Some((_, p)) = grads.iter().zip(model.store.iter()).find(|(g, _)| !g.is_finite()) {
            log::error!("non-finite gradient for parameter {}", p.name);
            return Err(Error::NonFinite {
                component: "gradient",
                epoch,
                value: f64::NAN,
            });
        }
        optimizer.step(&mut model.store, &grads)?;

        let evals = model.eval_pass(dataset.features(), &graph, &[&batch, &valid])?;
        let train_accuracy = evaluate_scores(&evals[0].probs, &labels_of(&batch))?.accuracy;
        let val = if valid.is_empty() {
            None
        } else {
            Some(evaluate_scores(&evals[1].probs, &valid_labels)?)
        };
        let record = EpochRecord {
            epoch,
            ce: losses.ce,
            kl: losses.kl,
            ss: losses.ss,
            total: losses.total,
            val_accuracy: val.map(|m| m.accuracy),
            val_auroc: val.and_then(|m| m.auroc),
            val_auprc: val.and_then(|m| m.auprc),
            val_f1: val.map(|m| m.f1),
            train_accuracy,
            val_loss: val.map(|_| evals[1].loss),
        };
        log::debug!("epoch {epoch}: total {:.6} val_auroc {:?}", record.total, record.val_auroc);
        if let Some(auroc) = record.val_auroc {
            if best.as_ref().is_none_or(|(b, _, _)| auroc > *b) {
                best = Some((auroc, epoch, model.store.clone()));
            }
        }
        on_epoch(&record);
        history.push(record);
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.store.assign_from(&params)?;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainedModel {
        model,
        optimizer,
        history,
        best_epoch,
        split: split.clone(),
    })
}

/// Metrics of the model on labelled pairs, message graph from `split.train`.
pub fn evaluate(model: &CadglModel, dataset: &DdiDataset, graph: &MessageGraph, pairs: &[PairExample]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::contract("evaluation needs at least one pair"));
    }
    let evals = model.eval_pass(dataset.features(), graph, &[pairs])?;
    evaluate_scores(&evals[0].probs, &labels_of(pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub test: Metrics,
    pub history: Vec<EpochRecord>,
}

/// Train once and score the test split.
pub fn run_once(dataset: &DdiDataset, split: &Split, config: &TrainConfig) -> Result<RunReport> {
    let trained = train(dataset, split, config)?;
    let graph = build_message_graph(dataset, &split.train)?;
    let test = evaluate(&trained.model, dataset, &graph, &test_pairs(dataset, split)?)?;
    Ok(RunReport {
        seed: config.seed,
        best_epoch: trained.best_epoch,
        test,
        history: trained.history,
    })
}

/// Seeds `config.seed + r` for `r` in `0..runs`.
pub fn repeat_configs(config: &TrainConfig, runs: usize) -> Result<Vec<TrainConfig>> {
    if runs < 2 {
        return Err(Error::contract("repeated runs need k >= 2"));
    }
    Ok((0..runs as u64)
        .map(|r| TrainConfig {
            seed: config.seed.wrapping_add(r),
            ..config.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedReport {
    pub runs: Vec<RunReport>,
    pub summary: MetricsSummary,
}

impl RepeatedReport {
    pub fn from_runs(runs: Vec<RunReport>) -> Result<Self> {
        let metrics: Vec<Metrics> = runs.iter().map(|r| r.test).collect();
        Ok(Self {
            summary: MetricsSummary::from_runs(&metrics)?,
            runs,
        })
    }
}

/// `runs` sequential trainings with consecutive seeds.
pub fn run_repeated(dataset: &DdiDataset, split: &Split, config: &TrainConfig, runs: usize) -> Result<RepeatedReport> {
    let reports = repeat_configs(config, runs)?
        .iter()
        .map(|c| run_once(dataset, split, c))
        .collect::<Result<Vec<_>>>()?;
    RepeatedReport::from_runs(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub d1: usize,
    pub d2: usize,
    pub t: usize,
    pub probability: f64,
}

impl RankedPair {
    /// Probability as a percentage with three decimals, e.g. `"99.883%"`.
    pub fn percent(&self) -> String {
        format!("{:.3}%", 100.0 * self.probability)
    }
}

/// Scores candidates that are not known interactions and returns the
/// `top_k` most probable, ties broken by `(d1, d2, t)`.
pub fn rank_novel(
    model: &CadglModel,
    features: &Tensor,
    graph: &MessageGraph,
    known: &PositiveSet,
    candidates: &[(usize, usize, usize)],
    top_k: usize,
) -> Result<Vec<RankedPair>> {
    let mut novel = Vec::with_capacity(candidates.len());
    for &(d1, d2, t) in candidates {
        if known.contains(d1, d2, t) {
            log::warn!("candidate ({d1}, {d2}, {t}) is a known interaction; skipped");
        } else {
            novel.push((d1, d2, t));
        }
    }
    if novel.is_empty() {
        return Ok(Vec::new());
    }
    let probs = model.predict(features, graph, &novel)?;
    let mut ranked: Vec<RankedPair> = novel
        .into_iter()
        .zip(probs)
        .map(|((d1, d2, t), probability)| RankedPair { d1, d2, t, probability })
        .collect();
    ranked.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then((a.d1, a.d2, a.t).cmp(&(b.d1, b.d2, b.t)))
    });
    ranked.truncate(top_k);
    Ok(ranked)
}
