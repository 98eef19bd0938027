//! Binary checkpoint container shared by every trainable model.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"LDLABCKP" | u32 format_version | u64 header_len | header JSON | f32 blobs
//! ```
//!
//! The JSON header holds the model kind, its configuration, training
//! metadata and the name and shape of every parameter; the blobs follow in
//! header order.

use std::path::Path;

use ldlab_nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"LDLABCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Denoiser,
    Autoencoder,
    Detector,
}

/// Position of a denoiser checkpoint in the training pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Stage1,
    Stage2,
    /// Trained from initialization directly on the multi-style corpus.
    OneStep,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Init => "init",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::OneStep => "one_step",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingMeta {
    pub stage: Option<Stage>,
    pub steps: u64,
    pub seed: u64,
    pub pretrained: bool,
    pub finetuned: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub meta: TrainingMeta,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    meta: TrainingMeta,
    params: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            meta: self.meta.clone(),
            params: self.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let short = || CheckpointError::Malformed("unexpected end of data".into());
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes.get(8..12).ok_or_else(short)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let len = u64::from_le_bytes(bytes.get(12..20).ok_or_else(short)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(bytes.get(20..20 + len).ok_or_else(short)?)?;
        let mut pos = 20 + len;
        let mut params = ParamStore::new();
        for (name, shape) in header.params {
            let n: usize = shape.iter().product();
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(short)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            params.add(name, Tensor::from_vec(&shape, data));
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { kind: header.kind, config: header.config, meta: header.meta, params })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind { expected: kind, found: self.kind });
        }
        Ok(())
    }

    /// Parse the stored configuration and check it matches `kind`.
    pub fn config_as<C: serde::de::DeserializeOwned>(&self, kind: ModelKind) -> Result<C, CheckpointError> {
        self.expect_kind(kind)?;
        Ok(serde_json::from_value(self.config.clone())?)
    }

    /// Copy the stored parameters into a freshly built model's store.
    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<(), CheckpointError> {
        store.load_from(&self.params).map_err(CheckpointError::Mismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("a", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]));
        params.add("b", Tensor::from_vec(&[3], vec![0.0, -0.0, 7.0]));
        Checkpoint {
            kind: ModelKind::Detector,
            config: serde_json::json!({"width": 4}),
            meta: TrainingMeta { steps: 12, seed: 3, pretrained: true, ..Default::default() },
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Malformed(_))));
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        assert!(matches!(sample().expect_kind(ModelKind::Denoiser), Err(CheckpointError::WrongKind { .. })));
    }
}
