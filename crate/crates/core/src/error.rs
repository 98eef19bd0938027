use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::detector::HeatmapError;
use crate::diffusion::DiffusionError;
use crate::editing::EditError;
use crate::image::ImageError;
use crate::landmarks::LandmarkError;
use crate::procedural::AlignmentError;

/// Errors from the pipelines, corpus builders and evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unknown style id {0}")]
    BadStyle(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty list")]
    EmptyList,
    #[error("wrong checkpoint stage: expected {expected}, found {found}")]
    WrongStage { expected: String, found: String },
    #[error("incompatible autoencoder: {0}")]
    IncompatibleAutoencoder(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("replayed record {0} does not match its stored bytes")]
    ReplayMismatch(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}
