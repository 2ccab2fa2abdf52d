//! Tab-separated edge and feature tables and the synthetic-data sidecar.
//!
//! Edges: `drug1<TAB>drug2<TAB>type_id`, one interaction per line.
//! Features: a `drug_id<TAB>f0<TAB>f1…` header, then one row per drug.
//! Lines starting with `#` are comments in both.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cadgl_core::ddigraph::{DdiDataset, Edge};
use cadgl_core::synth::SynthParams;
use cadgl_core::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: u64, detail: String },
    #[error("{path}: {count} duplicate interaction(s), first {first}")]
    Duplicate { path: PathBuf, count: usize, first: String },
    #[error("{path}: unknown drug id {drug:?}")]
    UnknownDrug { path: PathBuf, drug: String },
    #[error("{path}: no feature row for drug {drug:?}")]
    MissingDrug { path: PathBuf, drug: String },
    #[error("{path}: non-finite value {value:?} at row {row}, column {column}")]
    NonFinite {
        path: PathBuf,
        row: u64,
        column: String,
        value: String,
    },
    #[error("{path}: {detail}")]
    Json { path: PathBuf, detail: String },
    #[error(transparent)]
    Model(#[from] cadgl_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}

fn tsv_reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .has_headers(headers)
        .flexible(true)
        .quoting(false)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io {
            path: path.to_owned(),
            source,
        },
        kind => IoError::Parse {
            path: path.to_owned(),
            line,
            detail: format!("{kind:?}"),
        },
    }
}

/// Interaction triples by string id, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEdges {
    /// Drugs in order of first appearance.
    pub drug_ids: Vec<String>,
    /// Distinct type ids: numeric order if every id is an integer, else
    /// lexicographic.
    pub type_labels: Vec<String>,
    pub triples: Vec<(String, String, String)>,
}

impl RawEdges {
    /// Index-based edges against the given drug and type orderings.
    pub fn edges(&self, drug_ids: &[String], type_labels: &[String]) -> std::result::Result<Vec<Edge>, String> {
        let drugs: HashMap<&str, usize> = drug_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let types: HashMap<&str, usize> = type_labels.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        self.triples
            .iter()
            .map(|(a, b, t)| {
                let lookup = |m: &HashMap<&str, usize>, k: &str, what: &str| m.get(k).copied().ok_or_else(|| format!("unknown {what} {k:?}"));
                Ok(Edge {
                    src: lookup(&drugs, a, "drug")?,
                    dst: lookup(&drugs, b, "drug")?,
                    ty: lookup(&types, t, "interaction type")?,
                })
            })
            .collect()
    }
}

pub fn sort_type_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.parse::<u64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<u64>().unwrap_or(0));
    } else {
        labels.sort();
    }
}

pub fn load_edges(path: &Path) -> Result<RawEdges> {
    let mut reader = tsv_reader(path, false)?;
    let mut drug_ids = Vec::new();
    let mut seen_drugs = HashSet::new();
    let mut types = BTreeSet::new();
    let mut triples = Vec::new();
    let mut unique = HashMap::new();
    let mut duplicates = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(IoError::Parse {
                path: path.to_owned(),
                line,
                detail: format!("expected drug1<TAB>drug2<TAB>type_id, found {} field(s)", record.len()),
            });
        }
        let fields: Vec<String> = record.iter().map(|f| f.trim().to_owned()).collect();
        if fields.iter().any(|f| f.is_empty()) {
            return Err(IoError::Parse {
                path: path.to_owned(),
                line,
                detail: "empty field".into(),
            });
        }
        for d in &fields[..2] {
            if seen_drugs.insert(d.clone()) {
                drug_ids.push(d.clone());
            }
        }
        types.insert(fields[2].clone());
        let triple = (fields[0].clone(), fields[1].clone(), fields[2].clone());
        if unique.insert(triple.clone(), line).is_some() {
            duplicates.push((line, triple));
            continue;
        }
        triples.push(triple);
    }
    if let Some((line, (a, b, t))) = duplicates.first() {
        return Err(IoError::Duplicate {
            path: path.to_owned(),
            count: duplicates.len(),
            first: format!("({a}, {b}, {t}) at line {line}"),
        });
    }
    let mut type_labels: Vec<String> = types.into_iter().collect();
    sort_type_labels(&mut type_labels);
    Ok(RawEdges {
        drug_ids,
        type_labels,
        triples,
    })
}

/// Feature matrix aligned to `drug_ids`. With `allow_missing`, drugs without
/// a row get zeros and a warning.
pub fn load_features(path: &Path, drug_ids: &[String], allow_missing: bool) -> Result<Tensor> {
    let mut reader = tsv_reader(path, true)?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() {
        return Err(IoError::Parse {
            path: path.to_owned(),
            line: 1,
            detail: "missing drug_id<TAB>f0… header".into(),
        });
    }
    let f_dim = header.len() - 1;
    let index: HashMap<&str, usize> = drug_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let mut data = vec![0.0; drug_ids.len() * f_dim];
    let mut filled = vec![false; drug_ids.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(IoError::Parse {
                path: path.to_owned(),
                line,
                detail: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let drug = record[0].trim();
        let &row = index.get(drug).ok_or_else(|| IoError::UnknownDrug {
            path: path.to_owned(),
            drug: drug.to_owned(),
        })?;
        if std::mem::replace(&mut filled[row], true) {
            return Err(IoError::Parse {
                path: path.to_owned(),
                line,
                detail: format!("second feature row for drug {drug:?}"),
            });
        }
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| IoError::Parse {
                path: path.to_owned(),
                line,
                detail: format!("column {} is not a number: {field:?}", &header[c + 1]),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFinite {
                    path: path.to_owned(),
                    row: line,
                    column: header[c + 1].to_owned(),
                    value: field.to_owned(),
                });
            }
            data[row * f_dim + c] = v;
        }
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        if !allow_missing {
            return Err(IoError::MissingDrug {
                path: path.to_owned(),
                drug: drug_ids[missing].clone(),
            });
        }
        let count = filled.iter().filter(|f| !**f).count();
        log::warn!("{}: {count} drug(s) without features filled with zeros", path.display());
    }
    Ok(Tensor::new(&[drug_ids.len(), f_dim], data)?)
}

/// Loads both tables. Type indices follow `type_labels` when given (a
/// checkpoint's ordering), otherwise the file's sorted type ids.
pub fn load_dataset(edges: &Path, features: &Path, allow_missing: bool, type_labels: Option<&[String]>) -> Result<DdiDataset> {
    let raw = load_edges(edges)?;
    let types = type_labels.map_or_else(|| raw.type_labels.clone(), <[String]>::to_vec);
    let indexed = raw.edges(&raw.drug_ids, &types).map_err(|detail| IoError::Parse {
        path: edges.to_owned(),
        line: 0,
        detail,
    })?;
    let x = load_features(features, &raw.drug_ids, allow_missing)?;
    Ok(DdiDataset::new(raw.drug_ids, types, x, indexed)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

pub fn save_edges(dataset: &DdiDataset, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let ids = dataset.drug_ids();
    let types = dataset.type_labels();
    let mut body = String::new();
    for e in dataset.edges() {
        body.push_str(&format!("{}\t{}\t{}\n", ids[e.src], ids[e.dst], types[e.ty]));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Values are written in shortest round-trip form, so reloading is exact.
pub fn save_features(dataset: &DdiDataset, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let x = dataset.features();
    let mut body = String::from("drug_id");
    for c in 0..dataset.f_dim() {
        body.push_str(&format!("\tf{c}"));
    }
    body.push('\n');
    for (i, id) in dataset.drug_ids().iter().enumerate() {
        body.push_str(id);
        for v in x.row(i) {
            body.push_str(&format!("\t{v}"));
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Sidecar written next to synthetic tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthMeta {
    pub generator: String,
    pub params: SynthParams,
    pub n_edges: usize,
    pub type_labels: Vec<String>,
}

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const META_FILE: &str = "meta.json";

/// Writes `edges.tsv`, `features.tsv` and `meta.json` into `dir`.
pub fn save_synthetic(dataset: &DdiDataset, params: &SynthParams, dir: &Path) -> Result<()> {
    save_edges(dataset, &dir.join(EDGES_FILE))?;
    save_features(dataset, &dir.join(FEATURES_FILE))?;
    let meta = SynthMeta {
        generator: "stochastic_block".into(),
        params: params.clone(),
        n_edges: dataset.edges().len(),
        type_labels: dataset.type_labels().to_vec(),
    };
    write_json(&dir.join(META_FILE), &meta)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Json {
        path: path.to_owned(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
