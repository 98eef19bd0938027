//! Landmark-conditioned diffusion for synthesizing multi-domain face and
//! landmark pairs, with a heatmap landmark detector trained on the result
//! and an NME/FR/AUC evaluation harness.
//!
//! The pipeline runs on a procedural toy face domain:
//!
//! 1. [`procedural`] renders base-domain and styled faces from 68-point
//!    [`landmarks`].
//! 2. [`pipelines::train_stage1`] teaches a [`denoiser`] to follow rasterized
//!    landmark images on base-domain faces with the null style token.
//! 3. [`pipelines::train_stage2`] fine-tunes it on a small multi-style corpus.
//! 4. [`pipelines::generate_synthetic_dataset`] samples faces for
//!    [`editing`]-exaggerated landmarks with DDIM and classifier-free guidance.
//! 5. A [`detector`] pretrained on the base domain is fine-tuned on the
//!    synthetic set and scored with [`evaluation`].

pub mod autoencoder;
mod blocks;
pub mod checkpoint;
mod error;
pub mod denoiser;
pub mod detector;
pub mod diffusion;
pub mod editing;
pub mod evaluation;
pub mod image;
pub mod landmarks;
pub mod pipelines;
pub mod procedural;
pub mod seed;

pub use error::Error;
