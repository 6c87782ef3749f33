//! Checkpoint layout: `PPRC`, u32 version, u32 metadata length, JSON
//! metadata, then every tensor listed in the metadata as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{HeadKind, InceptionNetwork, LayerId};
use super::train::EpochStats;
use super::{InceptionConfig, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PPRC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: InceptionConfig,
    head: HeadKind,
    frozen: Vec<String>,
    seed: u64,
    tensors: Vec<TensorEntry>,
    /// Free-form hyperparameters of the run that produced the weights.
    #[serde(default)]
    hyperparameters: serde_json::Value,
}

fn tensors<F: Real>(net: &InceptionNetwork<F>) -> Vec<(String, Vec<f64>)> {
    let conv = |v: &[F]| v.iter().map(|x| x.to_f64().unwrap()).collect::<Vec<_>>();
    let mut out: Vec<(String, Vec<f64>)> = net
        .params()
        .into_iter()
        .map(|(_, name, p)| (name, conv(&p.value)))
        .collect();
    for (_, name, bn) in net.norm_stats() {
        out.push((format!("{name}.running_mean"), conv(&bn.running_mean)));
        out.push((format!("{name}.running_var"), conv(&bn.running_var)));
    }
    out
}

pub fn encode_checkpoint<F: Real>(net: &InceptionNetwork<F>, hyperparameters: serde_json::Value) -> Result<Vec<u8>> {
    let ts = tensors(net);
    let meta = Metadata {
        config: net.config,
        head: net.head_kind,
        frozen: net.frozen.iter().map(|l| l.to_string()).collect(),
        seed: net.seed,
        tensors: ts
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
        hyperparameters,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(12 + json.len() + ts.iter().map(|t| t.1.len() * 8).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, v) in &ts {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<InceptionNetwork<F>> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + json_len)
        .ok_or_else(|| bad("truncated metadata".into()))?;
    let meta: Metadata = serde_json::from_slice(body)?;
    let mut net = InceptionNetwork::<F>::new(meta.config, meta.head, meta.seed)?;
    net.set_frozen(
        meta.frozen
            .iter()
            .map(|s| s.parse::<LayerId>())
            .collect::<Result<Vec<_>>>()?,
    );

    let expected = tensors(&net);
    if expected.len() != meta.tensors.len() {
        return Err(bad(format!(
            "checkpoint lists {} tensors, architecture has {}",
            meta.tensors.len(),
            expected.len()
        )));
    }
    let mut offset = 12 + json_len;
    let mut values = Vec::with_capacity(expected.len());
    for ((name, v), entry) in expected.iter().zip(&meta.tensors) {
        if *name != entry.name || v.len() != entry.len {
            return Err(bad(format!(
                "tensor `{}` ({}) does not match architecture tensor `{name}` ({})",
                entry.name,
                entry.len,
                v.len()
            )));
        }
        let end = offset + 8 * entry.len;
        let raw = bytes
            .get(offset..end)
            .ok_or_else(|| bad(format!("truncated data in tensor `{name}` at byte {offset}")))?;
        values.push(
            raw.chunks_exact(8)
                .map(|c| F::from_f64(f64::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect::<Vec<F>>(),
        );
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }

    let mut it = values.into_iter();
    for (_, _, p) in net.params_mut() {
        p.value = it.next().unwrap();
    }
    for (_, _, bn) in net.norm_stats_mut() {
        bn.running_mean = it.next().unwrap();
        bn.running_var = it.next().unwrap();
    }
    Ok(net)
}

pub fn save_checkpoint<F: Real>(
    net: &InceptionNetwork<F>,
    hyperparameters: serde_json::Value,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(net, hyperparameters)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<InceptionNetwork<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes `epoch,train_loss,train_accuracy,val_loss`.
pub fn write_loss_trace(path: &Path, trace: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "train_accuracy", "val_loss"])?;
    for s in trace {
        w.write_record([
            s.epoch.to_string(),
            s.train_loss.to_string(),
            s.train_accuracy.to_string(),
            s.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
