//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u16` major and minor format version, `u64` header
//! length, a JSON header (model spec, epoch, seed, metadata and a tensor
//! directory) and finally every tensor as little-endian `f32`. Readers accept
//! any minor version of the same major version.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ModelSpec, TraversabilityNet};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;

const MAGIC: &[u8; 8] = b"TRAVCKPT";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerEntry {
    role: String,
    kind: String,
    step: u64,
    slots: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    epoch: usize,
    seed: u64,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    optimizers: Vec<OptimizerEntry>,
}

/// A trained model plus everything needed to resume or reproduce it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TraversabilityNet<f32>,
    pub epoch: usize,
    pub seed: u64,
    /// Optimizer states keyed by role (`main`, `domain`).
    pub optimizers: Vec<(String, OptimizerState)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: TraversabilityNet<f32>, epoch: usize, seed: u64) -> Self {
        Self {
            model,
            epoch,
            seed,
            optimizers: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data: Vec<f32> = Vec::new();
        for p in self.model.all_params().into_iter().chain(self.model.buffers()) {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                len: p.data.len(),
            });
            data.extend_from_slice(p.data);
        }
        let mut optimizers = Vec::new();
        for (role, st) in &self.optimizers {
            let mut slots = Vec::new();
            for (slot, values) in &st.slots {
                let name = format!("optim.{role}.{slot}");
                tensors.push(TensorEntry {
                    name: name.clone(),
                    shape: vec![values.len()],
                    len: values.len(),
                });
                data.extend_from_slice(values);
                slots.push(slot.clone());
            }
            optimizers.push(OptimizerEntry {
                role: role.clone(),
                kind: st.kind.clone(),
                step: st.step,
                slots,
            });
        }
        let header = Header {
            spec: self.model.spec().clone(),
            epoch: self.epoch,
            seed: self.seed,
            metadata: self.metadata.clone(),
            tensors,
            optimizers,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(32 + header_bytes.len() + 4 * data.len());
        out.write_all(MAGIC)?;
        out.write_u16::<LittleEndian>(FORMAT_MAJOR)?;
        out.write_u16::<LittleEndian>(FORMAT_MINOR)?;
        out.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
        out.write_all(&header_bytes)?;
        for v in data {
            out.write_f32::<LittleEndian>(v)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, tensors) = read_container(bytes)?;
        let mut model = TraversabilityNet::<f32>::new(header.spec.clone(), 0)?;
        let lookup = |name: &str, len: usize| -> Result<Vec<f32>> {
            let (entry, values) = tensors
                .iter()
                .find(|(e, _)| e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if entry.len != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has {} values, model expects {len}",
                    entry.len
                )));
            }
            Ok(values.clone())
        };
        let names: Vec<(String, usize)> = model
            .all_params()
            .iter()
            .chain(model.buffers().iter())
            .map(|p| (p.name.clone(), p.data.len()))
            .collect();
        let values: Vec<Vec<f32>> = names
            .iter()
            .map(|(n, len)| lookup(n, *len))
            .collect::<Result<_>>()?;
        for (dst, src) in model.state_mut().into_iter().zip(values) {
            dst.copy_from_slice(&src);
        }
        let mut optimizers = Vec::new();
        for o in &header.optimizers {
            let mut st = OptimizerState {
                kind: o.kind.clone(),
                step: o.step,
                slots: Vec::new(),
            };
            for slot in &o.slots {
                let name = format!("optim.{}.{slot}", o.role);
                let (_, values) = tensors
                    .iter()
                    .find(|(e, _)| e.name == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                st.slots.push((slot.clone(), values.clone()));
            }
            optimizers.push((o.role.clone(), st));
        }
        if !model.all_finite() {
            return Err(Error::Checkpoint("checkpoint contains non-finite parameters".into()));
        }
        Ok(Self {
            model,
            epoch: header.epoch,
            seed: header.seed,
            optimizers,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_container(bytes: &[u8]) -> Result<(Header, Vec<(TensorEntry, Vec<f32>)>)> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let major = cur.read_u16::<LittleEndian>()?;
    let _minor = cur.read_u16::<LittleEndian>()?;
    if major != FORMAT_MAJOR {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {major}.x (this build reads {FORMAT_MAJOR}.x)"
        )));
    }
    let header_len = cur.read_u64::<LittleEndian>()? as usize;
    let start = cur.position() as usize;
    let header_bytes = bytes
        .get(start..start + header_len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    cur.set_position((start + header_len) as u64);
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(Error::Checkpoint(format!("tensor {} shape/len mismatch", entry.name)));
        }
        let mut values = vec![0f32; entry.len];
        cur.read_f32_into::<LittleEndian>(&mut values)
            .map_err(|_| Error::Checkpoint(format!("truncated data for {}", entry.name)))?;
        tensors.push((entry.clone(), values));
    }
    Ok((header, tensors))
}

/// Copies encoder weights (`encoder.{i}.weight` / `encoder.{i}.bias`) from a
/// checkpoint-format file into `model`. This is how a pretrained segmentation
/// backbone is plugged in.
pub fn import_encoder_weights(model: &mut TraversabilityNet<f32>, path: &Path) -> Result<usize> {
    let bytes = fs::read(path)?;
    let (_, tensors) = read_container(&bytes)?;
    let names: Vec<(String, usize)> = model
        .feature_params()
        .iter()
        .filter(|p| p.name.starts_with("encoder."))
        .map(|p| (p.name.clone(), p.data.len()))
        .collect();
    let mut imported = 0;
    let mut slots = model.feature_params_mut();
    for (i, (name, len)) in names.iter().enumerate() {
        if let Some((entry, values)) = tensors.iter().find(|(e, _)| &e.name == name) {
            if entry.len != *len {
                return Err(Error::Checkpoint(format!("{name}: expected {len} values, found {}", entry.len)));
            }
            slots[i].copy_from_slice(values);
            imported += 1;
        }
    }
    if imported == 0 {
        return Err(Error::Checkpoint(format!("{} has no encoder tensors", path.display())));
    }
    Ok(imported)
}
