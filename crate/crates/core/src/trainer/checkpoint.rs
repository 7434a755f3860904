//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `XALIGNCK`, a little-endian `u64` byte length
//! `L`, `L` bytes of UTF-8 JSON [`CheckpointMeta`], then the raw
//! little-endian tensors listed in `meta.tensors`, in that order, each
//! `numel × dtype size` bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::model::{ModelParams, ModelSpec};
use super::{TrainHistory, TrainState};
use crate::dataio::write_atomic;
use crate::encoders::ParamKind;
use crate::error::{Error, Result};
use crate::evaluation::Method;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XALIGNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorRole {
    Weight,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub dtype: DType,
    pub method: Method,
    pub spec: ModelSpec,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub history: TrainHistory,
    pub tensors: Vec<TensorRecord>,
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let store = state.params.store();
    let mut tensors = Vec::new();
    let mut values: Vec<&Tensor<T>> = Vec::new();
    for e in store.entries() {
        let role = match e.kind {
            ParamKind::Weight => TensorRole::Weight,
            ParamKind::Buffer => TensorRole::Buffer,
        };
        tensors.push(TensorRecord {
            name: e.name.clone(),
            role,
            shape: e.tensor.shape().to_vec(),
        });
        values.push(&e.tensor);
    }
    for (role, moments) in [(TensorRole::AdamM, &state.adam.m), (TensorRole::AdamV, &state.adam.v)] {
        for (id, t) in store.trainable().into_iter().zip(moments) {
            tensors.push(TensorRecord {
                name: store.name(id).to_string(),
                role,
                shape: t.shape().to_vec(),
            });
            values.push(t);
        }
    }
    let meta = CheckpointMeta {
        schema_version: CHECKPOINT_VERSION,
        dtype: T::DTYPE,
        method: state.params.method(),
        spec: state.params.spec.clone(),
        adam: state.adam.config,
        adam_step: state.adam.step,
        history: state.history.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::json("checkpoint metadata", e))?;
    let blob_len: usize = values.iter().map(|t| t.numel()).sum::<usize>() * T::DTYPE.size_of();
    let mut bytes = Vec::with_capacity(16 + json.len() + blob_len);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in values {
        t.data().iter().for_each(|v| v.write_le(&mut bytes));
    }
    write_atomic(path, &bytes)
}

fn split_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(CheckpointMeta, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, "not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if len > body.len() {
        return Err(ckpt_err(path, "truncated metadata"));
    }
    let meta: CheckpointMeta =
        serde_json::from_slice(&body[..len]).map_err(|e| Error::json(path.display().to_string(), e))?;
    if meta.schema_version != CHECKPOINT_VERSION {
        return Err(ckpt_err(
            path,
            format!("unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})", meta.schema_version),
        ));
    }
    Ok((meta, &body[len..]))
}

/// Metadata only, e.g. to pick the precision before loading.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split_header(path, &bytes)?.0)
}

/// Loads a checkpoint written at precision `T`. When `expected` is given
/// the stored method must match it.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected: Option<Method>) -> Result<TrainState<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (meta, blobs) = split_header(path, &bytes)?;
    if let Some(m) = expected {
        if m != meta.method {
            return Err(ckpt_err(path, format!("holds a {} model, not {m}", meta.method)));
        }
    }
    if meta.dtype != T::DTYPE {
        return Err(ckpt_err(
            path,
            format!("stored as {}, requested {}", meta.dtype.name(), T::DTYPE.name()),
        ));
    }
    let size = T::DTYPE.size_of();
    let needed: usize = meta.tensors.iter().map(|r| r.shape.iter().product::<usize>() * size).sum();
    if needed != blobs.len() {
        return Err(ckpt_err(
            path,
            format!("tensor data is {} bytes, metadata declares {needed}", blobs.len()),
        ));
    }
    let mut params = ModelParams::<T>::init(meta.spec.clone(), 0)?;
    let mut adam = AdamState::new(meta.adam, params.store());
    adam.step = meta.adam_step;
    let trainable = params.store().trainable();
    let (mut offset, mut mi, mut vi) = (0usize, 0usize, 0usize);
    let mut entry = 0usize;
    for rec in &meta.tensors {
        let numel: usize = rec.shape.iter().product();
        let data: Vec<T> = blobs[offset..offset + numel * size].chunks_exact(size).map(T::read_le).collect();
        offset += numel * size;
        let tensor = Tensor::new(rec.shape.clone(), data)?;
        let store = params.store();
        let (slot_name, target) = match rec.role {
            TensorRole::Weight | TensorRole::Buffer => {
                let id = store.ids().nth(entry).ok_or_else(|| ckpt_err(path, "more tensors than the model has"))?;
                entry += 1;
                (store.name(id).to_string(), Some(id))
            }
            TensorRole::AdamM => {
                let id = *trainable.get(mi).ok_or_else(|| ckpt_err(path, "too many first moments"))?;
                (store.name(id).to_string(), None)
            }
            TensorRole::AdamV => {
                let id = *trainable.get(vi).ok_or_else(|| ckpt_err(path, "too many second moments"))?;
                (store.name(id).to_string(), None)
            }
        };
        if slot_name != rec.name {
            return Err(ckpt_err(path, format!("expected tensor {slot_name}, found {}", rec.name)));
        }
        match (rec.role, target) {
            (_, Some(id)) => params
                .store_mut()
                .set(id, tensor)
                .map_err(|e| ckpt_err(path, e))?,
            (TensorRole::AdamM, _) => {
                check_shape(path, &adam.m[mi], &tensor)?;
                adam.m[mi] = tensor;
                mi += 1;
            }
            _ => {
                check_shape(path, &adam.v[vi], &tensor)?;
                adam.v[vi] = tensor;
                vi += 1;
            }
        }
    }
    if entry != params.store().len() || mi != trainable.len() || vi != trainable.len() {
        return Err(ckpt_err(path, "checkpoint does not cover every tensor of the model"));
    }
    Ok(TrainState {
        params,
        adam,
        history: meta.history,
    })
}

fn check_shape<T: Scalar>(path: &Path, want: &Tensor<T>, got: &Tensor<T>) -> Result<()> {
    if want.shape() != got.shape() {
        return Err(ckpt_err(path, format!("moment shape {:?}, expected {:?}", got.shape(), want.shape())));
    }
    Ok(())
}
