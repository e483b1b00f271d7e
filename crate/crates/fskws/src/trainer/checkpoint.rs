//! Checkpoint container: `FSKW`, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header, then every array declared by
//! the header as little-endian f32 values in header order.

use std::fs;
use std::path::Path;

use fskws_core::nets::{ArchitectureSpec, Network};
use fskws_core::tensor::{AdamState, ParamSet, RunningStats, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"FSKW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {0} is not supported (expected {FORMAT_VERSION})")]
    VersionUnsupported(u32),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] fskws_core::Error),
}

/// A trained network with the configuration and validation score it was selected with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub train_config: TrainConfig,
    /// 0-based epoch the parameters come from.
    pub epoch: usize,
    pub val_accuracy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    architecture: ArchitectureSpec,
    train_config: TrainConfig,
    epoch: usize,
    val_accuracy: f64,
    adam_steps: Vec<u64>,
    arrays: Vec<ArrayInfo>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut arrays = Vec::new();
        let mut data: Vec<&[f32]> = Vec::new();
        for p in net.params().iter() {
            let shape = p.value.shape().to_vec();
            for (prefix, values) in [("param", p.value.data()), ("adam_m", &p.adam.m[..]), ("adam_v", &p.adam.v[..])] {
                arrays.push(ArrayInfo { name: format!("{prefix}.{}", p.name), shape: shape.clone() });
                data.push(values);
            }
        }
        for ((layer, channels), stats) in net.spec().batchnorm_layers().into_iter().zip(net.bn_stats()) {
            arrays.push(ArrayInfo { name: format!("bn_mean.{layer}"), shape: vec![channels] });
            data.push(&stats.mean);
            arrays.push(ArrayInfo { name: format!("bn_var.{layer}"), shape: vec![channels] });
            data.push(&stats.var);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture: net.spec().clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            val_accuracy: self.val_accuracy,
            adam_steps: net.params().iter().map(|p| p.adam.step).collect(),
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + data.iter().map(|d| d.len() * 4).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for values in data {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::ShapeMismatch("file ends inside the preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionUnsupported(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[16..];
        if header_len > body.len() as u64 {
            return Err(CheckpointError::ShapeMismatch("file ends inside the header".into()));
        }
        let (json, mut data) = body.split_at(header_len as usize);
        let header: Header = serde_json::from_slice(json)?;
        header.architecture.validate()?;

        let expected_arrays: usize = header.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
        if data.len() != expected_arrays * 4 {
            return Err(CheckpointError::ShapeMismatch(format!(
                "header declares {} array bytes, file has {}",
                expected_arrays * 4,
                data.len()
            )));
        }
        let mut take = |info: &ArrayInfo, name: &str, shape: &[usize]| -> Result<Vec<f32>, CheckpointError> {
            if info.name != name || info.shape != shape {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    info.name, info.shape
                )));
            }
            let n: usize = shape.iter().product();
            let (head, rest) = data.split_at(n * 4);
            data = rest;
            Ok(head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };

        let spec = &header.architecture;
        let param_shapes = spec.param_shapes();
        let bn_layers = spec.batchnorm_layers();
        if header.arrays.len() != 3 * param_shapes.len() + 2 * bn_layers.len()
            || header.adam_steps.len() != param_shapes.len()
        {
            return Err(CheckpointError::ShapeMismatch("array list does not match the architecture".into()));
        }
        let mut infos = header.arrays.iter();
        let mut params = ParamSet::new();
        for ((name, shape), step) in param_shapes.iter().zip(&header.adam_steps) {
            let value = take(infos.next().unwrap(), &format!("param.{name}"), shape)?;
            let m = take(infos.next().unwrap(), &format!("adam_m.{name}"), shape)?;
            let v = take(infos.next().unwrap(), &format!("adam_v.{name}"), shape)?;
            let id = params.add(name.clone(), Tensor::new(shape, value)?)?;
            params.get_mut(id).adam = AdamState { m, v, step: *step };
        }
        let mut bn_stats = Vec::new();
        for (layer, channels) in &bn_layers {
            let mean = take(infos.next().unwrap(), &format!("bn_mean.{layer}"), &[*channels])?;
            let var = take(infos.next().unwrap(), &format!("bn_var.{layer}"), &[*channels])?;
            bn_stats.push(RunningStats { mean, var });
        }
        let network = Network::from_parts(header.architecture, params, bn_stats)?;
        Ok(Self { network, train_config: header.train_config, epoch: header.epoch, val_accuracy: header.val_accuracy })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
