//! Checkpoints: a JSON manifest (resolved config, epoch, metric history,
//! tensor directory with shapes, offsets and per-tensor SHA-256) next to a
//! packed little-endian f32 payload. Values are canonicalized to f32 on
//! the first save, so load -> save -> load round-trips are bit-identical
//! and a single corrupted byte is caught and attributed to its tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mit_core::params::ParamSet;
use mit_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataio::sha256_hex;

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const PAYLOAD_FILE: &str = "checkpoint.bin";

#[derive(Debug)]
pub enum CkptError {
    Io(PathBuf, std::io::Error),
    /// Payload bytes disagree with a tensor's recorded checksum.
    Corrupt { tensor: String },
    Malformed(String),
}

impl std::fmt::Display for CkptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CkptError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CkptError::Corrupt { tensor } => {
                write!(f, "checkpoint payload corrupt in tensor '{tensor}'")
            }
            CkptError::Malformed(m) => write!(f, "malformed checkpoint: {m}"),
        }
    }
}

impl std::error::Error for CkptError {}

fn malformed(msg: impl Into<String>) -> CkptError {
    CkptError::Malformed(msg.into())
}

/// One epoch of history: optimizer state plus the test-split metrics.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct MetricRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Element count.
    pub len: usize,
    /// SHA-256 hex of this tensor's payload slice.
    pub checksum: String,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct CkptManifest {
    /// Fully-resolved run config the parameters were trained under.
    pub config: serde_json::Value,
    pub epoch: usize,
    pub history: Vec<MetricRow>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    dir: &Path,
    ps: &ParamSet,
    config: serde_json::Value,
    epoch: usize,
    history: &[MetricRow],
) -> Result<(), CkptError> {
    fs::create_dir_all(dir).map_err(|e| CkptError::Io(dir.into(), e))?;
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(ps.len());
    for (name, t) in ps.iter() {
        let offset = payload.len();
        for &v in &t.data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: String::from(name),
            shape: t.shape.clone(),
            trainable: t.requires_grad,
            offset,
            len: t.numel(),
            checksum: sha256_hex(&payload[offset..]),
        });
    }
    let bin_path = dir.join(PAYLOAD_FILE);
    fs::write(&bin_path, &payload).map_err(|e| CkptError::Io(bin_path, e))?;
    let manifest = CkptManifest { config, epoch, history: history.to_vec(), tensors };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| malformed(format!("manifest encode: {e}")))?;
    let man_path = dir.join(MANIFEST_FILE);
    fs::write(&man_path, json).map_err(|e| CkptError::Io(man_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamSet, CkptManifest), CkptError> {
    let man_path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&man_path).map_err(|e| CkptError::Io(man_path, e))?;
    let manifest: CkptManifest =
        serde_json::from_str(&raw).map_err(|e| malformed(format!("manifest: {e}")))?;
    let bin_path = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&bin_path).map_err(|e| CkptError::Io(bin_path, e))?;

    let mut ps = ParamSet::new();
    let mut expect_offset = 0usize;
    for entry in &manifest.tensors {
        if entry.offset != expect_offset {
            return Err(malformed(format!(
                "tensor '{}' at offset {} but previous data ends at {expect_offset}",
                entry.name, entry.offset
            )));
        }
        let nbytes = entry.len * 4;
        expect_offset = entry.offset + nbytes;
        if expect_offset > payload.len() {
            return Err(malformed(format!(
                "tensor '{}' needs bytes {}..{expect_offset}, payload has {}",
                entry.name,
                entry.offset,
                payload.len()
            )));
        }
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(malformed(format!(
                "tensor '{}' shape {:?} does not hold {} elements",
                entry.name, entry.shape, entry.len
            )));
        }
        let slice = &payload[entry.offset..expect_offset];
        if sha256_hex(slice) != entry.checksum {
            return Err(CkptError::Corrupt { tensor: entry.name.clone() });
        }
        let data: Vec<f64> = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if ps.contains(&entry.name) {
            return Err(malformed(format!("duplicate tensor '{}'", entry.name)));
        }
        let mut t = Tensor::new(entry.shape.clone(), data);
        t.requires_grad = entry.trainable;
        ps.insert(&entry.name, t);
    }
    if expect_offset != payload.len() {
        return Err(malformed(format!(
            "payload has {} bytes, tensor directory covers {expect_offset}",
            payload.len()
        )));
    }
    Ok((ps, manifest))
}
