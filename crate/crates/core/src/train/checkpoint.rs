//! Checkpoint file format: an 8-byte magic, a version word, a JSON header
//! (names, shapes, dtype, byte offsets, config, schedule, scaler, iteration)
//! and a contiguous little-endian IEEE-754 payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffusion::ScheduleSpec;
use crate::gdit::{GDiTConfig, GDiTModel, ParamSet};
use crate::numeric::{Dtype, Scalar, Tensor};
use crate::xform::RatingScaler;

const MAGIC: &[u8; 8] = b"EDGEREC\0";
const VERSION: u32 = 1;

/// Everything needed to resume training or run sampling.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub model: GDiTModel<F>,
    pub schedule: ScheduleSpec,
    pub scaler: RatingScaler,
    pub iteration: u64,
    pub seed: u64,
}

/// A checkpoint read back without knowing its precision in advance.
#[derive(Debug)]
pub enum LoadedCheckpoint {
    Single(Checkpoint<f32>),
    Double(Checkpoint<f64>),
}

impl LoadedCheckpoint {
    pub fn dtype(&self) -> Dtype {
        match self {
            LoadedCheckpoint::Single(_) => Dtype::F32,
            LoadedCheckpoint::Double(_) => Dtype::F64,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: Dtype,
    config: GDiTConfig,
    schedule: ScheduleSpec,
    scaler: RatingScaler,
    iteration: u64,
    seed: u64,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint<F: Scalar>(
    ckpt: &Checkpoint<F>,
    path: impl AsRef<Path>,
) -> Result<(), TrainError> {
    let path = path.as_ref();
    let elem = F::DTYPE.size_bytes();

    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, tensor) in ckpt.model.params().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in tensor.data() {
            v.write_le(&mut payload);
        }
        debug_assert_eq!(
            payload.len(),
            tensors.last().expect("just pushed").offset + tensor.len() * elem
        );
    }

    let header = Header {
        dtype: F::DTYPE,
        config: ckpt.model.config,
        schedule: ckpt.schedule.clone(),
        scaler: ckpt.scaler.clone(),
        iteration: ckpt.iteration,
        seed: ckpt.seed,
        tensors,
        payload_bytes: payload.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;

    let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

fn read_header(bytes: &[u8], path: &Path) -> Result<(Header, usize), TrainError> {
    let display = path.display();
    if bytes.len() < MAGIC.len() + 12 {
        return Err(TrainError::Checkpoint(format!("{display}: file too short")));
    }
    if &bytes[..8] != MAGIC {
        return Err(TrainError::Checkpoint(format!("{display}: bad magic")));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "{display}: unknown version {version}"
        )));
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json_end = 20 + json_len;
    if bytes.len() < json_end {
        return Err(TrainError::Checkpoint(format!(
            "{display}: truncated header"
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[20..json_end])
        .map_err(|e| TrainError::Checkpoint(format!("{display}: {e}")))?;
    Ok((header, json_end))
}

fn load_params<F: Scalar>(
    header: &Header,
    payload: &[u8],
    path: &Path,
) -> Result<ParamSet<F>, TrainError> {
    let elem = F::DTYPE.size_bytes();
    let mut entries = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let len: usize = entry.shape.iter().product();
        let end = entry.offset + len * elem;
        if end > payload.len() {
            return Err(TrainError::Checkpoint(format!(
                "{}: payload truncated at tensor `{}`",
                path.display(),
                entry.name
            )));
        }
        let data: Vec<F> = payload[entry.offset..end]
            .chunks_exact(elem)
            .map(F::read_le)
            .collect();
        entries.push((
            entry.name.clone(),
            Tensor::new(entry.shape.clone(), data).expect("length from shape"),
        ));
    }
    Ok(ParamSet::from_named(entries))
}

fn load_typed<F: Scalar>(
    header: Header,
    payload: &[u8],
    path: &Path,
) -> Result<Checkpoint<F>, TrainError> {
    let params = load_params::<F>(&header, payload, path)?;
    let model = GDiTModel::from_params(header.config, params)?;
    Ok(Checkpoint {
        model,
        schedule: header.schedule,
        scaler: header.scaler,
        iteration: header.iteration,
        seed: header.seed,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint, TrainError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let (header, payload_start) = read_header(&bytes, path)?;
    let payload = &bytes[payload_start..];
    if payload.len() != header.payload_bytes {
        return Err(TrainError::Checkpoint(format!(
            "{}: payload is {} bytes, header declares {}",
            path.display(),
            payload.len(),
            header.payload_bytes
        )));
    }
    match header.dtype {
        Dtype::F32 => Ok(LoadedCheckpoint::Single(load_typed(header, payload, path)?)),
        Dtype::F64 => Ok(LoadedCheckpoint::Double(load_typed(header, payload, path)?)),
    }
}
