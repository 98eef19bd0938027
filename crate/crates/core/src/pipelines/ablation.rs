use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::{sample_image, SamplerConfig};
use super::model::DiffusionModel;
use crate::autoencoder::Autoencoder;
use crate::checkpoint::Stage;
use crate::image::RgbImage;
use crate::landmarks::{rasterize, LandmarkSet};
use crate::procedural::{measure_alignment, sample_base_landmarks, AlignmentError, N_STYLES};
use crate::{seed, Error};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub n_samples: usize,
    /// Grid rows shown in the panel.
    pub panel_rows: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { n_samples: 64, panel_rows: 8, sampler: SamplerConfig::default(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    /// Mean alignment error in pixels, missing features counted at the image diagonal.
    pub mean_error_px: f64,
    /// Samples where some facial feature was absent or too scattered to locate.
    pub missing: usize,
    pub per_sample_px: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub n_samples: usize,
    pub styles: Vec<usize>,
    pub models: Vec<ModelScore>,
}

impl AblationReport {
    pub fn score(&self, name: &str) -> Option<&ModelScore> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// The fixed comparison grid: fresh base landmarks with styles cycling 1..=25.
pub fn ablation_grid(n: usize, seed: u64) -> Vec<(LandmarkSet, usize)> {
    (0..n).map(|i| (sample_base_landmarks(seed::derive(seed, "ablation-grid", i as u64)), 1 + i % N_STYLES)).collect()
}

fn alignment_error(img: &RgbImage, lm: &LandmarkSet) -> Result<Option<f64>, Error> {
    match measure_alignment(img, lm) {
        Ok(r) => Ok(Some(r.mean)),
        Err(AlignmentError::FeatureNotFound(_) | AlignmentError::FeatureDiffuse(..)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Compare the one-step baseline, the stage-1 model alone (sampled with the
/// null style) and the two-stage model on the same landmarks, styles and
/// initial noise. Writes `ablation.json` and `ablation_panel.png` to `out_dir`.
pub fn run_ablation(
    one_step: &DiffusionModel,
    stage1: &DiffusionModel,
    stage2: &DiffusionModel,
    autoencoder: &Autoencoder,
    cfg: &AblationConfig,
    out_dir: &Path,
    mut on_item: impl FnMut(usize, usize),
) -> Result<AblationReport, Error> {
    one_step.expect_stage(Stage::OneStep)?;
    stage1.expect_stage(Stage::Stage1)?;
    stage2.expect_stage(Stage::Stage2)?;
    if cfg.n_samples == 0 {
        return Err(Error::EmptyList);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let grid = ablation_grid(cfg.n_samples, cfg.seed);
    let models: [(&str, &DiffusionModel, bool); 3] =
        [("one_step", one_step, true), ("stage1_only", stage1, false), ("two_stage", stage2, true)];
    let size = stage2.setup.raster.height;
    let diagonal = (2.0 * (size * size) as f64).sqrt();

    let mut scores: Vec<ModelScore> = models
        .iter()
        .map(|(name, ..)| ModelScore { name: name.to_string(), mean_error_px: 0.0, missing: 0, per_sample_px: Vec::new() })
        .collect();
    let mut rows: Vec<Vec<RgbImage>> = Vec::new();
    for (i, (lm, style)) in grid.iter().enumerate() {
        let noise_seed = seed::derive(cfg.seed, "ablation-noise", i as u64);
        let mut row = vec![condition_preview(lm, stage2)?];
        for ((_, model, styled), score) in models.iter().zip(scores.iter_mut()) {
            let s = if *styled { *style } else { 0 };
            let img = sample_image(model, autoencoder, lm, s, &cfg.sampler, noise_seed)?;
            let err = alignment_error(&img, lm)?;
            if err.is_none() {
                score.missing += 1;
            }
            score.per_sample_px.push(err.unwrap_or(diagonal));
            row.push(img);
        }
        if i < cfg.panel_rows {
            rows.push(row);
        }
        on_item(i, grid.len());
    }
    for s in &mut scores {
        s.mean_error_px = s.per_sample_px.iter().sum::<f64>() / s.per_sample_px.len() as f64;
    }
    let report = AblationReport { n_samples: cfg.n_samples, styles: grid.iter().map(|g| g.1).collect(), models: scores };
    let json = out_dir.join("ablation.json");
    fs::write(&json, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
    panel(&rows).write_png(&out_dir.join("ablation_panel.png"))?;
    Ok(report)
}

fn condition_preview(lm: &LandmarkSet, model: &DiffusionModel) -> Result<RgbImage, Error> {
    let c = rasterize(lm, &model.setup.raster)?;
    let mut img = RgbImage::filled(c.height, c.width, [0.0; 3]);
    img.data.copy_from_slice(&c.pixels);
    Ok(img)
}

/// Tile equally sized images into a grid with 2 px gray gutters.
pub fn panel(rows: &[Vec<RgbImage>]) -> RgbImage {
    const GAP: usize = 2;
    let (h, w) = rows.first().and_then(|r| r.first()).map(|i| (i.height, i.width)).unwrap_or((1, 1));
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = RgbImage::filled(rows.len() * (h + GAP) + GAP, cols * (w + GAP) + GAP, [0.5; 3]);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    out.set(GAP + r * (h + GAP) + y, GAP + c * (w + GAP) + x, img.get(y, x));
                }
            }
        }
    }
    out
}
