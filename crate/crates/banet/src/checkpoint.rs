//! Versioned checkpoint files with a SHA-256 integrity trailer.
//!
//! Layout: `BANETCKP`, little-endian `u32` format version, `u64` header
//! length, UTF-8 JSON header, the tensors listed in the header as
//! little-endian `f32`, and finally the SHA-256 digest of everything before
//! it.
//!
//! Sampling randomness is a pure function of the seed, epoch and sample
//! index, so the iteration counter stands in for generator state.

use std::path::Path;

use banet_core::model::Banet;
use banet_core::nn::Layer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Phase, RunConfig};
use crate::error::{BanetError, Result};

const MAGIC: &[u8; 8] = b"BANETCKP";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Param,
    Buffer,
    Velocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Number of completed iterations in `phase`.
    pub iteration: u64,
    pub phase: Phase,
    pub config: RunConfig,
    pub param_count: usize,
    /// Seconds since the Unix epoch; omitted in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, Vec<f32>)>,
    pub buffers: Vec<(String, Vec<f32>)>,
    pub velocity: Vec<Vec<f32>>,
}

/// True when `BANET_DETERMINISTIC` is set to a non-empty value other than `0`.
pub fn deterministic_mode() -> bool {
    std::env::var("BANET_DETERMINISTIC").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn collect_params(model: &mut Banet) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
    out
}

fn collect_buffers(model: &mut Banet) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit_buffers("", &mut |name, b| out.push((name.to_string(), b.clone())));
    out
}

impl Checkpoint {
    pub fn capture(
        model: &mut Banet,
        velocity: &[Vec<f32>],
        config: &RunConfig,
        phase: Phase,
        iteration: u64,
    ) -> Self {
        let params = collect_params(model);
        let buffers = collect_buffers(model);
        let mut tensors = Vec::new();
        for (name, v) in &params {
            tensors.push(TensorEntry {
                name: name.clone(),
                kind: TensorKind::Param,
                len: v.len(),
            });
        }
        for (name, v) in &buffers {
            tensors.push(TensorEntry {
                name: name.clone(),
                kind: TensorKind::Buffer,
                len: v.len(),
            });
        }
        for (i, v) in velocity.iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("velocity.{i}"),
                kind: TensorKind::Velocity,
                len: v.len(),
            });
        }
        let created_unix = (!deterministic_mode()).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                iteration,
                phase,
                config: config.clone(),
                param_count: params.iter().map(|(_, v)| v.len()).sum(),
                created_unix,
                tensors,
            },
            params,
            buffers,
            velocity: velocity.to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let all = self
            .params
            .iter()
            .map(|(_, v)| v)
            .chain(self.buffers.iter().map(|(_, v)| v))
            .chain(self.velocity.iter());
        for tensor in all {
            for x in tensor {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| BanetError::Checkpoint(format!("integrity check failed: {what}"));
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("hash mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(BanetError::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| BanetError::Checkpoint(format!("bad header: {e}")))?;
        let mut payload = &body[header_end..];
        let expected: usize = header.tensors.iter().map(|t| t.len * 4).sum();
        if payload.len() != expected {
            return Err(corrupt("payload size does not match header"));
        }
        let (mut params, mut buffers, mut velocity) = (Vec::new(), Vec::new(), Vec::new());
        for entry in &header.tensors {
            let (chunk, rest) = payload.split_at(entry.len * 4);
            payload = rest;
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            match entry.kind {
                TensorKind::Param => params.push((entry.name.clone(), values)),
                TensorKind::Buffer => buffers.push((entry.name.clone(), values)),
                TensorKind::Velocity => velocity.push(values),
            }
        }
        Ok(Self {
            header,
            params,
            buffers,
            velocity,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| BanetError::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| BanetError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| BanetError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| BanetError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            BanetError::Checkpoint(m) => BanetError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Writes stored parameters and running statistics into `model`.
    pub fn restore_into(&self, model: &mut Banet) -> Result<()> {
        let mut problem: Option<String> = None;
        let mut params = self.params.iter();
        model.visit_params("", &mut |name, p| {
            match params.next() {
                Some((n, v)) if n == name && v.len() == p.len() => p.value.copy_from_slice(v),
                Some((n, v)) => {
                    problem.get_or_insert(format!("parameter {name}[{}] vs stored {n}[{}]", p.len(), v.len()));
                }
                None => {
                    problem.get_or_insert(format!("parameter {name} missing from checkpoint"));
                }
            }
        });
        let mut buffers = self.buffers.iter();
        model.visit_buffers("", &mut |name, b| match buffers.next() {
            Some((n, v)) if n == name && v.len() == b.len() => b.copy_from_slice(v),
            _ => {
                problem.get_or_insert(format!("buffer {name} does not match checkpoint"));
            }
        });
        if params.next().is_some() || buffers.next().is_some() {
            problem.get_or_insert("checkpoint has extra tensors".into());
        }
        match problem {
            Some(p) => Err(BanetError::Checkpoint(format!("architecture mismatch: {p}"))),
            None => Ok(()),
        }
    }

    /// Rebuilds the network described by the embedded config.
    pub fn build_model(&self) -> Result<Banet> {
        let cfg = self.header.config.model_config();
        let mut model = Banet::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore_into(&mut model)?;
        Ok(model)
    }
}
