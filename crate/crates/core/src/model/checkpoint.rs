//! Checkpoint persistence: `manifest.json` plus raw little-endian f32
//! tensors, bit-exact across save/load cycles.
//!
//! Layout inside a checkpoint directory:
//!
//! * `manifest.json` — format version, model config, training counters,
//!   vocabulary fingerprint, and a name -> (shape, offset, len) table in
//!   parameter-store order.
//! * `params.bin` — every tensor's values, concatenated in manifest order.
//! * `adam.bin` — first moments then second moments in the same layout;
//!   written only when optimizer state is saved.

use super::ModelConfig;
use crate::autograd::{AdamState, Init, ParamStore};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    offset: u64,
    /// Number of f32 values.
    len: usize,
    trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    epoch: u64,
    step: u64,
    vocab_fingerprint: String,
    params: Vec<ParamEntry>,
    optimizer: Option<OptimizerMeta>,
}

/// Counters and identity carried alongside the tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub step: u64,
    pub vocab_fingerprint: String,
}

pub struct LoadedCheckpoint {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(
    dir: &Path,
    config: &ModelConfig,
    store: &ParamStore<f32>,
    optimizer: Option<&AdamState<f32>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(store.len());
    let mut blob: Vec<u8> = Vec::with_capacity(store.n_scalars() * 4);
    for p in store.iter() {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset: blob.len() as u64,
            len: p.value.len(),
            trainable: p.trainable,
        });
        for v in &p.value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        epoch: meta.epoch,
        step: meta.step,
        vocab_fingerprint: meta.vocab_fingerprint.clone(),
        params: entries,
        optimizer: optimizer.map(|o| OptimizerMeta {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step: o.step,
        }),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(dir.join("params.bin"), &blob)?;
    if let Some(o) = optimizer {
        let mut adam_blob: Vec<u8> = Vec::with_capacity(blob.len() * 2);
        for moments in [&o.m, &o.v] {
            for buf in moments {
                for v in buf {
                    adam_blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        std::fs::write(dir.join("adam.bin"), &adam_blob)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = std::fs::read(dir.join("params.bin"))?;
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused by Zeros init
    for e in &manifest.params {
        let end = e.offset as usize + e.len * 4;
        if end > blob.len() {
            return Err(Error::Truncated {
                expected: end,
                got: blob.len(),
            });
        }
        let idx = store.add(&e.name, &e.shape, Init::Zeros, e.trainable, &mut rng);
        let p = store.param_mut(idx);
        for (i, chunk) in blob[e.offset as usize..end].chunks_exact(4).enumerate() {
            p.value[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(meta) => {
            let adam_blob = std::fs::read(dir.join("adam.bin"))?;
            let expected = store.n_scalars() * 8;
            if adam_blob.len() != expected {
                return Err(Error::Truncated {
                    expected,
                    got: adam_blob.len(),
                });
            }
            let mut state = AdamState::new(&store, meta.lr);
            state.beta1 = meta.beta1;
            state.beta2 = meta.beta2;
            state.eps = meta.eps;
            state.step = meta.step;
            let mut cursor = 0usize;
            for moments in [&mut state.m, &mut state.v] {
                for buf in moments.iter_mut() {
                    for v in buf.iter_mut() {
                        *v = f32::from_le_bytes([
                            adam_blob[cursor],
                            adam_blob[cursor + 1],
                            adam_blob[cursor + 2],
                            adam_blob[cursor + 3],
                        ]);
                        cursor += 4;
                    }
                }
            }
            Some(state)
        }
    };
    Ok(LoadedCheckpoint {
        config: manifest.config,
        store,
        optimizer,
        meta: CheckpointMeta {
            epoch: manifest.epoch,
            step: manifest.step,
            vocab_fingerprint: manifest.vocab_fingerprint,
        },
    })
}
