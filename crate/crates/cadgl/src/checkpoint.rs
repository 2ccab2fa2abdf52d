//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//! ```text
//! b"CADGLCKP"  u32 version  u64 header_len  header (JSON)
//! u64 n_records, then per record:
//!   u32 name_len  name (UTF-8)  u32 ndim  u64 dims[ndim]  f64 values[product(dims)]
//! ```
//! Records hold every model parameter by name followed by the optimizer's
//! first (`adam.m.<name>`) and second (`adam.v.<name>`) moments.

use std::fs;
use std::path::{Path, PathBuf};

use cadgl_core::ddigraph::Split;
use cadgl_core::optim::Adam;
use cadgl_core::trainer::{CadglModel, EpochRecord, TrainConfig, TrainedModel};
use cadgl_core::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"CADGLCKP";
pub const FORMAT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    Magic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("{} trailing bytes after the last record", .0)]
    Trailing(usize),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("unknown parameter {0:?} in checkpoint")]
    UnknownParameter(String),
    #[error("parameter {name:?}: checkpoint shape {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("parameter {0:?} missing from checkpoint")]
    MissingParameter(String),
    #[error("parameter {0:?} stored twice")]
    DuplicateParameter(String),
    #[error(transparent)]
    Model(#[from] cadgl_core::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Everything except the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub f_dim: usize,
    pub n_types: usize,
    /// Drug order the model was trained against.
    pub drug_ids: Vec<String>,
    /// Interaction-type label of each type-embedding row.
    pub type_labels: Vec<String>,
    /// Epoch whose parameters are stored.
    pub epoch: usize,
    pub adam_step: u64,
    pub split: Split,
    /// Free-form description of the training data.
    pub data_source: String,
    pub history: Vec<EpochRecord>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: CadglModel,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn from_trained(trained: TrainedModel, drug_ids: Vec<String>, type_labels: Vec<String>, data_source: String) -> Self {
        let header = CheckpointHeader {
            config: trained.model.config().clone(),
            f_dim: trained.model.f_dim(),
            n_types: trained.model.n_types(),
            drug_ids,
            type_labels,
            epoch: trained.best_epoch,
            adam_step: trained.optimizer.steps(),
            split: trained.split,
            data_source,
            history: trained.history,
        };
        Self {
            header,
            model: trained.model,
            optimizer: trained.optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let store = self.model.params();
        let mut out = Vec::with_capacity(header.len() + 3 * 8 * store.total_len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(3 * store.len() as u64).to_le_bytes());
        let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
        for p in store.iter() {
            put_record(&mut out, &p.name, &p.value);
        }
        for (prefix, moments) in [(ADAM_M, self.optimizer.first_moments()), (ADAM_V, self.optimizer.second_moments())] {
            for (name, t) in names.iter().zip(moments) {
                put_record(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        out
    }

    /// Rebuilds the model described by the header.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = read_header(&mut r)?;
        let config = header.config.clone();
        Self::read_body(header, &config, r)
    }

    /// Like [`Checkpoint::from_bytes`] but builds the model from `config`,
    /// so architectural mismatches surface as errors naming the parameter.
    pub fn from_bytes_with_config(bytes: &[u8], config: &TrainConfig) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = read_header(&mut r)?;
        Self::read_body(header, config, r)
    }

    fn read_body(header: CheckpointHeader, config: &TrainConfig, mut r: Reader<'_>) -> Result<Self> {
        if header.type_labels.len() != header.n_types {
            return Err(CheckpointError::Header(format!(
                "{} type labels for {} types",
                header.type_labels.len(),
                header.n_types
            )));
        }
        let mut model = CadglModel::new(config, header.f_dim, header.n_types)?;
        let template = model.params().clone();
        let mut m = moments_like(&template);
        let mut v = moments_like(&template);
        let mut seen_param = vec![false; template.len()];
        let mut seen_m = vec![false; template.len()];
        let mut seen_v = vec![false; template.len()];
        let n_records = r.u64("record count")?;
        for _ in 0..n_records {
            let (name, tensor) = get_record(&mut r)?;
            let (base, slot, seen) = if let Some(base) = name.strip_prefix(ADAM_M) {
                (base, Slot::M, &mut seen_m)
            } else if let Some(base) = name.strip_prefix(ADAM_V) {
                (base, Slot::V, &mut seen_v)
            } else {
                (name.as_str(), Slot::Param, &mut seen_param)
            };
            let id = template
                .id(base)
                .ok_or_else(|| CheckpointError::UnknownParameter(name.clone()))?;
            let expected = template.get(id).shape();
            if tensor.shape() != expected {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    found: tensor.shape().to_vec(),
                    expected: expected.to_vec(),
                });
            }
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(CheckpointError::DuplicateParameter(name));
            }
            match slot {
                Slot::Param => *model.params_mut().get_mut(id) = tensor,
                Slot::M => m[id.index()] = tensor,
                Slot::V => v[id.index()] = tensor,
            }
        }
        if r.pos != r.bytes.len() {
            return Err(CheckpointError::Trailing(r.bytes.len() - r.pos));
        }
        for (prefix, seen) in [("", &seen_param), (ADAM_M, &seen_m), (ADAM_V, &seen_v)] {
            if let Some(k) = seen.iter().position(|s| !s) {
                let name = template.iter().nth(k).map(|p| p.name.clone()).unwrap_or_default();
                return Err(CheckpointError::MissingParameter(format!("{prefix}{name}")));
            }
        }
        let optimizer = Adam::from_state(config.adam(), m, v, header.adam_step)?;
        Ok(Self {
            header,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
                path: dir.to_owned(),
                source,
            })?;
        }
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn load_with_config(path: &Path, config: &TrainConfig) -> Result<Self> {
        Self::from_bytes_with_config(&read_file(path)?, config)
    }
}

enum Slot {
    Param,
    M,
    V,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

fn moments_like(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &'static str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| CheckpointError::Truncated { what })
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.bytes.len() < MAGIC.len() || &r.bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    r.pos = MAGIC.len();
    let found = r.u32("format version")?;
    if found != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.len("header length")?;
    let json = r.take(n, "header")?;
    serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))
}

fn get_record(r: &mut Reader<'_>) -> Result<(String, Tensor)> {
    let n = r.u32("record name length")? as usize;
    let name = String::from_utf8(r.take(n, "record name")?.to_vec())
        .map_err(|_| CheckpointError::Header("record name is not UTF-8".into()))?;
    let ndim = r.u32("record rank")? as usize;
    let mut shape = Vec::with_capacity(ndim.min(8));
    for _ in 0..ndim {
        shape.push(r.len("record shape")?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|c| c.checked_mul(8))
        .ok_or(CheckpointError::Truncated { what: "record values" })?;
    let raw = r.take(count, "record values")?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Header(format!("record {name:?}: {e}")))?;
    Ok((name, tensor))
}
