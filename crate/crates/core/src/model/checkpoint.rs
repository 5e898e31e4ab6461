//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"NSSLCKPT" | u32 version | u64 header_len | header JSON | f64 data...
//! ```
//!
//! The JSON header holds the encoder config, the optional head kind, the
//! provenance block and the ordered tensor index (`name`, `shape`). Tensor
//! data follows in index order as raw `f64` values, so a save/load round trip
//! is bit-exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, EncoderConfig, HeadKind, InitSource, Model};
use crate::error::{Error, Result};
use crate::nn::Visit;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NSSLCKPT";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Pretext task that produced the weights, or `"none"`.
    pub pretext: String,
    pub dataset: String,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub head: Option<HeadKind>,
    pub provenance: Provenance,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    head: Option<HeadKind>,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

/// What [`Model::restore`] did with the checkpoint head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadReport {
    pub head_restored: bool,
}

impl Checkpoint {
    pub fn from_model(model: &Model, provenance: Provenance, include_head: bool) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .filter(|t| include_head || t.name.starts_with("encoder."))
            .collect();
        let mut encoder = model.config().clone();
        encoder.init = InitSource::HeRandom;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            encoder,
            head: include_head.then(|| model.head_kind()),
            provenance,
            tensors,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            encoder: self.encoder.clone(),
            head: self.head,
            provenance: self.provenance.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let values: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut buf = Vec::with_capacity(8 + 4 + 8 + json.len() + values * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.version.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])?;
        let mut data = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let len: usize = entry.shape.iter().product();
            if data.len() < len * 8 {
                return Err(Error::Checkpoint(format!("truncated data for `{}`", entry.name)));
            }
            let values = data[..len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[len * 8..];
            tensors.push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                data: values,
            });
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            version,
            encoder: header.encoder,
            head: header.head,
            provenance: header.provenance,
            tensors,
        })
    }

    /// Rebuild a model; heads not stored in the checkpoint come from `head`.
    pub fn to_model(&self, head: Option<HeadKind>, seed: u64) -> Result<Model> {
        let kind = head
            .or(self.head)
            .ok_or_else(|| Error::Checkpoint("checkpoint has no head; a head kind is required".into()))?;
        let mut model = build_model(&self.encoder, kind, seed)?;
        model.restore(self)?;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, provenance: Provenance, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, provenance, true).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Model {
    /// Copy encoder tensors (weights and batch-norm statistics) from `ckpt`.
    /// The head is copied only when the checkpoint stores the same head kind;
    /// otherwise the current head initialization is kept.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<LoadReport> {
        let stored: HashMap<&str, &NamedTensor> = ckpt.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut diffs = Vec::new();
        let mut seen = 0usize;
        self.visit("", &mut |name, p| {
            if !name.starts_with("encoder.") {
                return;
            }
            match stored.get(name) {
                None => diffs.push(format!("{name}: missing from checkpoint")),
                Some(t) if t.shape != p.shape() => {
                    seen += 1;
                    diffs.push(format!("{name}: expected shape {:?}, found {:?}", p.shape(), t.shape))
                }
                Some(_) => seen += 1,
            }
        });
        let stored_encoder = ckpt.tensors.iter().filter(|t| t.name.starts_with("encoder.")).count();
        if stored_encoder > seen {
            let mut model_names = std::collections::HashSet::new();
            self.visit("", &mut |name, _| {
                model_names.insert(name.to_string());
            });
            for t in ckpt.tensors.iter().filter(|t| t.name.starts_with("encoder.")) {
                if !model_names.contains(&t.name) {
                    diffs.push(format!("{}: not present in model", t.name));
                }
            }
        }
        if !diffs.is_empty() {
            return Err(Error::ArchitectureMismatch { diffs });
        }
        let head_restored = ckpt.head == Some(self.head_kind()) && {
            let mut ok = true;
            self.visit("", &mut |name, p| {
                if name.starts_with("head.") {
                    ok &= stored.get(name).is_some_and(|t| t.shape == p.shape());
                }
            });
            ok
        };
        self.visit_mut("", &mut |name, p| {
            if name.starts_with("encoder.") || (head_restored && name.starts_with("head.")) {
                let t = stored[name];
                for (dst, src) in p.value.iter_mut().zip(&t.data) {
                    *dst = *src;
                }
            }
        });
        Ok(LoadReport { head_restored })
    }
}
