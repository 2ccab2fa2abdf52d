//! The work behind each subcommand, kept out of `main` so tests can call it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use cadgl_core::ddigraph::{build_message_graph, split, DdiDataset, Split};
use cadgl_core::gradcheck::{run_checks, CheckOutcome, Scope};
use cadgl_core::metrics::{Metrics, MetricsSummary, TABLE_HEADER};
use cadgl_core::synth::{synth_generate, SynthParams};
use cadgl_core::trainer::{
    evaluate, rank_novel, repeat_configs, split_pairs, test_pairs, train_with, EpochRecord, RankedPair,
    RepeatedReport, RunReport, SplitPart, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfigFile};
use crate::io::{self, EDGES_FILE, FEATURES_FILE};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.txt";
pub const ABLATION_FILE: &str = "ablation.json";
pub const RANKING_HEADER: &str = "# rank\tdrug1\tdrug2\ttype_label\tprobability_percent";
pub const CURVE_HEADER: &str = "epoch,val_loss,val_auroc,val_auprc";
/// Upper bound on `--all-unseen` candidates.
pub const MAX_UNSEEN_CANDIDATES: usize = 1_000_000;

/// Failure classes with stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

pub fn synth(params: &SynthParams, out: &Path) -> CliResult<()> {
    params.validate().map_err(usage)?;
    let ds = synth_generate(params).map_err(runtime)?;
    io::save_synthetic(&ds, params, out).map_err(runtime)?;
    log::info!("{} drugs, {} interactions written to {}", ds.n_drugs(), ds.edges().len(), out.display());
    Ok(())
}

/// Loads the configured data. Synthetic data goes through the same files
/// as real data: it is written under `out_dir/data` first.
pub fn load_data(cfg: &RunConfigFile) -> CliResult<(DdiDataset, String)> {
    match cfg.source().map_err(usage)? {
        DataSource::Files { edges, features } => {
            let ds = io::load_dataset(edges, features, cfg.data.allow_missing, None).map_err(runtime)?;
            Ok((ds, format!("{} + {}", edges.display(), features.display())))
        }
        DataSource::Synthetic(params) => {
            let dir = cfg.out_dir.join("data");
            synth(params, &dir)?;
            let ds = io::load_dataset(&dir.join(EDGES_FILE), &dir.join(FEATURES_FILE), false, None).map_err(runtime)?;
            Ok((ds, format!("synthetic seed {} in {}", params.seed, dir.display())))
        }
    }
}

pub fn split_of(cfg: &RunConfigFile, ds: &DdiDataset) -> CliResult<Split> {
    split(ds, cfg.split.ratios, cfg.split.seed).map_err(runtime)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs: usize,
    pub final_train_accuracy: f64,
    pub test: Metrics,
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
}

pub fn train(cfg: &RunConfigFile) -> CliResult<TrainSummary> {
    cfg.validate().map_err(usage)?;
    let (ds, source) = load_data(cfg)?;
    let split = split_of(cfg, &ds)?;
    let out = &cfg.out_dir;
    io::write_json(&out.join(CONFIG_ECHO_FILE), cfg).map_err(runtime)?;
    let trained = train_with(&ds, &split, &cfg.train, |r| {
        log::info!(
            "epoch {:>4}  total {:.4}  ce {:.4}  kl {:.4}  ss {:.4}  val_auroc {}",
            r.epoch,
            r.total,
            r.ce,
            r.kl,
            r.ss,
            r.val_auroc.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
        )
    })
    .context("training failed")?;
    let graph = build_message_graph(&ds, &split.train).map_err(runtime)?;
    let test = evaluate(&trained.model, &ds, &graph, &test_pairs(&ds, &split).map_err(runtime)?).map_err(runtime)?;
    let metrics_log = out.join(METRICS_FILE);
    io::write_text(&metrics_log, &metrics_jsonl(&trained.history)).map_err(runtime)?;
    let summary = TrainSummary {
        best_epoch: trained.best_epoch,
        epochs: trained.history.len(),
        final_train_accuracy: trained.history.last().map_or(0.0, |r| r.train_accuracy),
        test,
        checkpoint: out.join(CHECKPOINT_FILE),
        metrics_log,
    };
    let ckpt = Checkpoint::from_trained(trained, ds.drug_ids().to_vec(), ds.type_labels().to_vec(), source);
    ckpt.save(&summary.checkpoint).map_err(runtime)?;
    io::write_json(&out.join(SUMMARY_FILE), &summary).map_err(runtime)?;
    Ok(summary)
}

/// One JSON object per line.
pub fn metrics_jsonl(history: &[EpochRecord]) -> String {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r).expect("record serialises"));
        s.push('\n');
    }
    s
}

/// Loads `edges`/`features` in the checkpoint's drug and type order, or
/// fails when they do not describe the data the checkpoint was trained on.
pub fn load_for_checkpoint(ckpt: &Checkpoint, edges: &Path, features: &Path) -> CliResult<DdiDataset> {
    let h = &ckpt.header;
    let ds = io::load_dataset(edges, features, false, Some(&h.type_labels)).map_err(runtime)?;
    if ds.drug_ids() != h.drug_ids.as_slice() {
        return Err(runtime(anyhow!(
            "drug ids in {} do not match the checkpoint ({} vs {} drugs, or a different order)",
            edges.display(),
            ds.n_drugs(),
            h.drug_ids.len()
        )));
    }
    if ds.f_dim() != h.f_dim {
        return Err(runtime(anyhow!(
            "{} has {} feature columns, the checkpoint expects {}",
            features.display(),
            ds.f_dim(),
            h.f_dim
        )));
    }
    let s = &h.split;
    let covered = s.train.len() + s.valid.len() + s.test.len();
    let max = s.train.iter().chain(&s.valid).chain(&s.test).copied().max();
    if covered != ds.edges().len() || max.is_some_and(|m| m >= ds.edges().len()) {
        return Err(runtime(anyhow!(
            "checkpoint split covers {covered} interactions, {} has {}",
            edges.display(),
            ds.edges().len()
        )));
    }
    Ok(ds)
}

pub fn eval(ckpt_path: &Path, edges: &Path, features: &Path, part: SplitPart, positives_only: bool) -> CliResult<Metrics> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(runtime)?;
    let ds = load_for_checkpoint(&ckpt, edges, features)?;
    let graph = build_message_graph(&ds, &ckpt.header.split.train).map_err(runtime)?;
    let mut pairs = split_pairs(&ds, &ckpt.header.split, part).map_err(runtime)?;
    if positives_only {
        pairs.retain(|p| p.label == 1);
    }
    if pairs.is_empty() {
        return Err(runtime(anyhow!("no pairs to evaluate")));
    }
    evaluate(&ckpt.model, &ds, &graph, &pairs).map_err(runtime)
}

pub enum Candidates<'a> {
    File(&'a Path),
    AllUnseen { seed: u64 },
}

pub fn rank(ckpt_path: &Path, edges: &Path, features: &Path, candidates: Candidates<'_>, top: usize) -> CliResult<String> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(runtime)?;
    let ds = load_for_checkpoint(&ckpt, edges, features)?;
    let graph = build_message_graph(&ds, &ckpt.header.split.train).map_err(runtime)?;
    let known = ds.positive_set();
    let raw = match candidates {
        Candidates::File(path) => read_candidates(path, &ds)?,
        Candidates::AllUnseen { seed } => unseen_candidates(&ds, seed),
    };
    let mut novel = Vec::with_capacity(raw.len());
    for (d1, d2, t) in raw {
        if known.contains(d1, d2, t) {
            log::warn!(
                "candidate ({}, {}, {}) is a known interaction; skipped",
                ds.drug_ids()[d1],
                ds.drug_ids()[d2],
                ds.type_labels()[t]
            );
        } else {
            novel.push((d1, d2, t));
        }
    }
    if novel.is_empty() {
        log::warn!("no novel candidates left to rank");
        return Ok(String::new());
    }
    let ranked = rank_novel(&ckpt.model, ds.features(), &graph, &known, &novel, top).map_err(runtime)?;
    Ok(ranking_tsv(&ds, &ranked))
}

pub fn ranking_tsv(ds: &DdiDataset, ranked: &[RankedPair]) -> String {
    let mut s = String::from(RANKING_HEADER);
    s.push('\n');
    for (k, r) in ranked.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            k + 1,
            ds.drug_ids()[r.d1],
            ds.drug_ids()[r.d2],
            ds.type_labels()[r.t],
            r.percent()
        );
    }
    s
}

/// `drug1 drug2 type_label` rows; unknown ids are an error.
fn read_candidates(path: &Path, ds: &DdiDataset) -> CliResult<Vec<(usize, usize, usize)>> {
    let raw = io::load_edges(path).map_err(runtime)?;
    let drug = |id: &str| ds.drug_ids().iter().position(|d| d == id);
    let ty = |l: &str| ds.type_labels().iter().position(|d| d == l);
    raw.triples
        .iter()
        .map(|(a, b, t)| match (drug(a), drug(b), ty(t)) {
            (Some(a), Some(b), Some(t)) => Ok((a, b, t)),
            _ => Err(runtime(anyhow!("{}: candidate ({a}, {b}, {t}) names an unknown drug or type", path.display()))),
        })
        .collect()
}

/// Every ordered pair of distinct drugs with every type, or a seeded
/// sample of [`MAX_UNSEEN_CANDIDATES`] of them when that is too many.
pub fn unseen_candidates(ds: &DdiDataset, seed: u64) -> Vec<(usize, usize, usize)> {
    let (n, k) = (ds.n_drugs(), ds.n_types());
    let known = ds.positive_set();
    let total = n.saturating_mul(n.saturating_sub(1)).saturating_mul(k);
    if total <= MAX_UNSEEN_CANDIDATES {
        let mut out = Vec::with_capacity(total);
        for d1 in 0..n {
            for d2 in (0..n).filter(|&d2| d2 != d1) {
                out.extend((0..k).filter(|&t| !known.contains(d1, d2, t)).map(|t| (d1, d2, t)));
            }
        }
        return out;
    }
    log::warn!("{total} candidate triples; ranking a seeded sample of {MAX_UNSEEN_CANDIDATES}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = BTreeSet::new();
    while picked.len() < MAX_UNSEEN_CANDIDATES {
        let d1 = rng.random_range(0..n);
        let d2 = rng.random_range(0..n);
        let t = rng.random_range(0..k);
        if d1 != d2 && !known.contains(d1, d2, t) {
            picked.insert((d1, d2, t));
        }
    }
    picked.into_iter().collect()
}

pub fn parse_scope(name: &str) -> Option<Scope> {
    Scope::ALL.iter().copied().find(|s| s.name() == name)
}

pub fn gradcheck(scope: Option<Scope>, step: f64, tol: f64) -> CliResult<(String, Vec<CheckOutcome>)> {
    if !(step > 0.0) || !(tol > 0.0) {
        return Err(usage("--step and --tol must be positive"));
    }
    let outcomes = run_checks(scope, step, tol).map_err(runtime)?;
    let mut table = format!("{:<22} {:<9} {:>12} {:>7} {}\n", "check", "scope", "max_rel_err", "coords", "status");
    for o in &outcomes {
        let _ = writeln!(
            table,
            "{:<22} {:<9} {:>12.3e} {:>7} {}",
            o.name,
            o.scope.name(),
            o.report.max_rel_err,
            o.report.coords_checked,
            if o.report.pass { "ok" } else { "FAIL" }
        );
    }
    Ok((table, outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LcpOnly,
    McpOnly,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LcpOnly, Variant::McpOnly, Variant::Both];

    pub fn label(self) -> &'static str {
        match self {
            Variant::LcpOnly => "LCP-only",
            Variant::McpOnly => "MCP-only",
            Variant::Both => "LCP+MCP",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Variant::LcpOnly => "lcp_only",
            Variant::McpOnly => "mcp_only",
            Variant::Both => "both",
        }
    }

    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_lcp: self != Variant::McpOnly,
            use_mcp: self != Variant::LcpOnly,
            ..config.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub report: RepeatedReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<VariantReport>,
    /// Soft check: mean accuracy of both ≥ MCP-only ≥ LCP-only.
    pub ordering_holds: bool,
}

impl AblationReport {
    pub fn summary(&self, v: Variant) -> &MetricsSummary {
        &self.variants.iter().find(|r| r.variant == v).expect("all variants run").report.summary
    }

    pub fn table(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for r in &self.variants {
            s.push_str(&r.report.summary.table_row(r.variant.label()));
            s.push('\n');
        }
        s
    }
}

/// Trains every (variant, seed) combination, one thread per run.
pub fn run_variants(ds: &DdiDataset, split: &Split, config: &TrainConfig, seeds: usize, variants: &[Variant]) -> CliResult<Vec<VariantReport>> {
    let jobs: Vec<(Variant, TrainConfig)> = variants
        .iter()
        .map(|&v| repeat_configs(&v.apply(config), seeds).map(|cs| cs.into_iter().map(move |c| (v, c))))
        .collect::<cadgl_core::Result<Vec<_>>>()
        .map_err(usage)?
        .into_iter()
        .flatten()
        .collect();
    let results: Vec<cadgl_core::Result<RunReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, c)| s.spawn(move || cadgl_core::trainer::run_once(ds, split, c)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut per_variant: Vec<(Variant, Vec<RunReport>)> = variants.iter().map(|&v| (v, Vec::new())).collect();
    for ((v, _), r) in jobs.iter().zip(results) {
        let r = r.context("training failed")?;
        per_variant.iter_mut().find(|(pv, _)| pv == v).expect("known variant").1.push(r);
    }
    per_variant
        .into_iter()
        .map(|(variant, runs)| Ok(VariantReport { variant, report: RepeatedReport::from_runs(runs).map_err(runtime)? }))
        .collect()
}

pub fn ablate(cfg: &RunConfigFile, seeds: usize) -> CliResult<AblationReport> {
    let mut base = cfg.train.clone();
    base.use_lcp = true;
    base.use_mcp = true;
    RunConfigFile { train: base.clone(), ..cfg.clone() }.validate().map_err(usage)?;
    let (ds, _) = load_data(cfg)?;
    let split = split_of(cfg, &ds)?;
    io::write_json(&cfg.out_dir.join(CONFIG_ECHO_FILE), cfg).map_err(runtime)?;
    let variants = run_variants(&ds, &split, &base, seeds, &Variant::ALL)?;
    let report = finish_ablation(variants);
    for v in &report.variants {
        let path = cfg.out_dir.join(format!("curves_{}.csv", v.variant.file_stem()));
        io::write_text(&path, &curve_csv(&v.report.runs)).map_err(runtime)?;
    }
    io::write_text(&cfg.out_dir.join(REPORT_FILE), &report.table()).map_err(runtime)?;
    io::write_json(&cfg.out_dir.join(ABLATION_FILE), &report).map_err(runtime)?;
    Ok(report)
}

pub fn finish_ablation(variants: Vec<VariantReport>) -> AblationReport {
    let mut report = AblationReport {
        variants,
        ordering_holds: true,
    };
    let acc = |v| report.summary(v).accuracy.mean;
    let holds = acc(Variant::Both) >= acc(Variant::McpOnly) && acc(Variant::McpOnly) >= acc(Variant::LcpOnly);
    if !holds {
        log::warn!(
            "mean accuracy ordering both >= MCP-only >= LCP-only does not hold: {:.4} / {:.4} / {:.4}",
            acc(Variant::Both),
            acc(Variant::McpOnly),
            acc(Variant::LcpOnly)
        );
    }
    report.ordering_holds = holds;
    report
}

/// Per-epoch validation curves averaged over runs. A cell is empty when
/// any run left it undefined.
pub fn curve_csv(runs: &[RunReport]) -> String {
    let epochs = runs.iter().map(|r| r.history.len()).min().unwrap_or(0);
    let mut s = format!("{CURVE_HEADER}\n");
    for e in 0..epochs {
        let mean = |f: fn(&EpochRecord) -> Option<f64>| {
            runs.iter()
                .map(|r| f(&r.history[e]))
                .sum::<Option<f64>>()
                .map_or_else(String::new, |v| (v / runs.len() as f64).to_string())
        };
        let _ = writeln!(
            s,
            "{},{},{},{}",
            runs[0].history[e].epoch,
            mean(|r| r.val_loss),
            mean(|r| r.val_auroc),
            mean(|r| r.val_auprc)
        );
    }
    s
}
