//! Binary checkpoints.
//!
//! Layout: the magic `TUSSCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then little-endian
//! `f32` blobs: all parameters in visiting order, followed by the first and
//! second optimizer moments when present. Values round-trip bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tuss_core::nn::Parameters;
use tuss_core::train::{AdamW, ScheduleState, TrainConfig, Trainable};
use tuss_core::{Baseline, ModelConfig, Tuss};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TUSSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tuss,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
}

/// Where a run stands, saved with the parameters so it can be resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub config: TrainConfig,
    pub schedule: ScheduleState,
    pub optimizer: OptimizerState,
    /// `"fit"` or `"fine-tune"`.
    pub stage: String,
    /// Validation loss after each completed epoch of this stage.
    pub validation_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub tensors: Vec<TensorInfo>,
    pub training: Option<TrainingState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
    /// First and second moments, present with `header.training`.
    pub moments: Option<(Vec<f32>, Vec<f32>)>,
}

/// Models that can be stored in a checkpoint.
pub trait Checkpointable: Trainable<f32> + Send + Sync {
    const KIND: ModelKind;
    fn build(config: ModelConfig, seed: u64) -> Result<Self>;
    fn model_config(&self) -> &ModelConfig;
}

impl Checkpointable for Tuss<f32> {
    const KIND: ModelKind = ModelKind::Tuss;
    fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Tuss::new(config, &mut ChaCha8Rng::seed_from_u64(seed))?)
    }
    fn model_config(&self) -> &ModelConfig {
        self.config()
    }
}

impl Checkpointable for Baseline<f32> {
    const KIND: ModelKind = ModelKind::Baseline;
    fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Baseline::new(config, &mut ChaCha8Rng::seed_from_u64(seed))?)
    }
    fn model_config(&self) -> &ModelConfig {
        self.config()
    }
}

fn tensor_infos<M: Parameters<f32>>(model: &M) -> Vec<TensorInfo> {
    model.named_params().into_iter().map(|(name, p)| TensorInfo { name, shape: p.shape.clone() }).collect()
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), message: message.into() }
}

impl Checkpoint {
    pub fn from_model<M: Checkpointable>(model: &M, training: Option<(TrainingState, &AdamW<f32>)>) -> Self {
        let (training, moments) = match training {
            Some((state, opt)) => (Some(state), Some((opt.m.clone(), opt.v.clone()))),
            None => (None, None),
        };
        Self {
            header: CheckpointHeader { kind: M::KIND, model: model.model_config().clone(), tensors: tensor_infos(model), training },
            params: model.flatten(),
            moments,
        }
    }

    /// Rebuilds the model, checking kind, tensor names and shapes.
    pub fn model<M: Checkpointable>(&self, path: &Path) -> Result<M> {
        if self.header.kind != M::KIND {
            return Err(bad(path, format!("holds a {:?} model, expected {:?}", self.header.kind, M::KIND)));
        }
        let mut model = M::build(self.header.model.clone(), 0)?;
        let expected = tensor_infos(&model);
        if expected != self.header.tensors {
            let first = expected
                .iter()
                .zip(&self.header.tensors)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} {:?} vs stored {} {:?}", a.name, a.shape, b.name, b.shape))
                .unwrap_or_else(|| format!("{} tensors vs stored {}", expected.len(), self.header.tensors.len()));
            return Err(bad(path, format!("tensor layout does not match the model config: {first}")));
        }
        model.unflatten(&self.params);
        Ok(model)
    }

    /// Optimizer restored from the stored moments and hyper-parameters.
    pub fn optimizer(&self, path: &Path) -> Result<AdamW<f32>> {
        let (Some(t), Some((m, v))) = (&self.header.training, &self.moments) else {
            return Err(bad(path, "no optimizer state stored"));
        };
        let o = &t.optimizer;
        Ok(AdamW { beta1: o.beta1, beta2: o.beta2, eps: o.eps, weight_decay: o.weight_decay, step: o.step, m: m.clone(), v: v.clone() })
    }

    /// Writes through a temporary file and renames, so a crash never
    /// leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut buf = Vec::with_capacity(20 + header.len() + 4 * self.params.len() * 3);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        let blobs = std::iter::once(&self.params).chain(self.moments.iter().flat_map(|(m, v)| [m, v]));
        for blob in blobs {
            for x in blob {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let tmp = tmp_path(path);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad(path, "not a tuss checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(path, format!("format version {version} is not supported (expected {FORMAT_VERSION})")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad(path, "truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(path, format!("header: {e}")))?;
        let n: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let blobs = if header.training.is_some() { 3 } else { 1 };
        let data = &bytes[20 + hlen..];
        if data.len() != 4 * n * blobs {
            return Err(bad(path, format!("expected {} data bytes, found {}", 4 * n * blobs, data.len())));
        }
        let floats: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut parts = floats.chunks_exact(n.max(1));
        let params = if n == 0 { Vec::new() } else { parts.next().unwrap().to_vec() };
        let moments = (blobs == 3 && n > 0).then(|| (parts.next().unwrap().to_vec(), parts.next().unwrap().to_vec()));
        Ok(Self { header, params, moments })
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Loads a model of type `M` from a checkpoint file.
pub fn load_model<M: Checkpointable>(path: impl AsRef<Path>) -> Result<M> {
    let path = path.as_ref();
    Checkpoint::load(path)?.model(path)
}
