//! Bit-exact checkpoint persistence.
//!
//! A checkpoint is a record container (magic `SEMCKPT1`, version 1) whose
//! records are the parameter tensors in registration order, preceded by a
//! `__meta` record holding the training-step counter and the config digest
//! (split into two 16-bit halves so every value is exactly representable
//! in f32).

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{err, Result};
use crate::params::ParamStore;
use crate::records::{self, Record, CHECKPOINT_MAGIC};

pub const CHECKPOINT_VERSION: u32 = 1;
const META_NAME: &str = "__meta";
/// f32 represents integers exactly only up to 2^24.
const MAX_EXACT_STEP: u64 = 1 << 24;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config_digest: u32,
    /// `(name, shape, f32 payload)` per parameter, in registration order.
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

/// Serialize every parameter (f32 payloads halve the size; training math
/// stays f64).
pub fn save(store: &ParamStore, step: u64, config_digest: u32) -> Result<Vec<u8>> {
    if step > MAX_EXACT_STEP {
        return Err(err!(Contract, "step counter {step} not exactly representable"));
    }
    let mut recs = Vec::with_capacity(store.len() + 1);
    recs.push(Record::new(
        META_NAME,
        alloc::vec![3],
        alloc::vec![
            step as f32,
            (config_digest & 0xffff) as f32,
            (config_digest >> 16) as f32,
        ],
    )?);
    for (_, p) in store.iter() {
        recs.push(Record::new(
            p.name.clone(),
            p.value.shape().to_vec(),
            p.value.data().iter().map(|&v| v as f32).collect(),
        )?);
    }
    Ok(records::write_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &recs))
}

pub fn load(bytes: &[u8]) -> Result<Checkpoint> {
    let recs = records::read_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
    let meta = recs
        .iter()
        .find(|r| r.name == META_NAME)
        .ok_or_else(|| err!(Format, "checkpoint missing {META_NAME} record"))?;
    if meta.payload.len() != 3 {
        return Err(err!(Format, "malformed {META_NAME} record"));
    }
    let step = meta.payload[0] as u64;
    let config_digest = (meta.payload[1] as u32) | ((meta.payload[2] as u32) << 16);
    let entries = recs
        .into_iter()
        .filter(|r| r.name != META_NAME)
        .map(|r| (r.name, r.extents, r.payload))
        .collect();
    Ok(Checkpoint { version: CHECKPOINT_VERSION, step, config_digest, entries })
}

/// Restore parameter values from a checkpoint. Every checkpoint entry must
/// match a registered parameter in name and shape, and every parameter
/// must be present; the digest must match the current configuration.
pub fn apply(store: &mut ParamStore, ckpt: &Checkpoint, expected_digest: u32) -> Result<()> {
    if ckpt.config_digest != expected_digest {
        return Err(err!(
            Version,
            "checkpoint was written for config digest {:#010x}, current is {:#010x}",
            ckpt.config_digest,
            expected_digest
        ));
    }
    if ckpt.entries.len() != store.len() {
        return Err(err!(
            Format,
            "checkpoint has {} parameters, model has {}",
            ckpt.entries.len(),
            store.len()
        ));
    }
    // Validate everything before mutating: no partial model on error.
    for (name, shape, payload) in &ckpt.entries {
        let id = store
            .lookup(name)
            .ok_or_else(|| err!(Format, "checkpoint parameter {name:?} unknown to this model"))?;
        let t = store.value(id);
        if t.shape() != shape.as_slice() {
            return Err(err!(
                Format,
                "parameter {name:?} shape {:?} != checkpoint {:?}",
                t.shape(),
                shape
            ));
        }
        if payload.len() != t.numel() {
            return Err(err!(Format, "parameter {name:?} payload length mismatch"));
        }
    }
    for (name, _, payload) in &ckpt.entries {
        let id = store.lookup(name).expect("validated above");
        let data = store.value_mut(id).data_mut();
        for (dst, &src) in data.iter_mut().zip(payload) {
            *dst = src as f64;
        }
    }
    Ok(())
}
