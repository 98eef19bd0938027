use std::fs;
use std::path::{Path, PathBuf};

use ldlab_nn::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::DiffusionModel;
use crate::autoencoder::Autoencoder;
use crate::checkpoint::{Stage, TrainingMeta};
use crate::diffusion::{cfg_combine, ddim_sample, ddim_sample_clipped};
use crate::editing::{apply_plan, sample_edit_plan, EditConfig};
use crate::evaluation::{dataset_hash, sha256_hex};
use crate::image::RgbImage;
use crate::landmarks::LandmarkSet;
use crate::procedural::{prepare_dirs, write_pair, DatasetRecord, Manifest};
use crate::seed;
use crate::Error;

/// Sidecar written next to a generated manifest.
pub const GENERATION_FILE: &str = "generation.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub ddim_steps: usize,
    pub guidance_w: f64,
    /// Clamp each step's clean-image estimate to `[-1, 1]`. Applies only in
    /// pixel space, where that range is the image range.
    pub clip_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { ddim_steps: 50, guidance_w: 2.0, clip_denoised: true }
    }
}

/// Everything outside the records needed to replay a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationInfo {
    pub sampler: SamplerConfig,
    pub edits: EditConfig,
    pub seed: u64,
    pub styles: Vec<usize>,
    pub per_style: usize,
    /// Directory of the landmark pool; record `source_landmarks` paths resolve against it.
    pub pool_dir: PathBuf,
    pub pool_hash: String,
    pub model_hash: String,
    pub autoencoder_hash: String,
}

impl GenerationInfo {
    pub fn read(dir: &Path) -> Result<Self, Error> {
        let path = dir.join(GENERATION_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn model_hash(model: &DiffusionModel) -> Result<String, Error> {
    Ok(sha256_hex(&model.to_checkpoint().to_bytes()?))
}

fn autoencoder_hash(ae: &Autoencoder) -> Result<String, Error> {
    Ok(sha256_hex(&ae.to_checkpoint(TrainingMeta::default()).to_bytes()?))
}

/// Sample one image for `lm` in `style` with DDIM and classifier-free
/// guidance. The unconditional branch keeps the landmark image and swaps the
/// style for the null token, so style 0 needs a single network pass per step.
/// The initial noise is drawn from `(seed, "sampler-noise")`.
pub fn sample_image(
    model: &DiffusionModel,
    autoencoder: &Autoencoder,
    lm: &LandmarkSet,
    style: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<RgbImage, Error> {
    model.check_autoencoder(autoencoder)?;
    let schedule = model.setup.schedule.build()?;
    let d = &model.setup.denoiser;
    let shape = [1, d.latent_channels, d.latent_size, d.latent_size];
    let cond = model.setup.condition(lm)?;
    let mut rng = seed::rng(seed, "sampler-noise", 0);
    let z_t: Vec<f32> = (0..shape.iter().product()).map(|_| rng.sample(StandardNormal)).collect();

    let guided = style != 0;
    let (styles, cond) = if guided { (vec![style, 0], Tensor::stack(&[cond.clone(), cond])) } else { (vec![0], cond) };
    let n = styles.len();
    let probe = Tensor::zeros(&[n, shape[1], shape[2], shape[3]]);
    model.denoiser.check_inputs(&probe, &vec![1; n], &cond, &styles)?;

    let predict = |z: &[f32], t: usize| {
        let item = Tensor::from_vec(&shape, z.to_vec());
        let zb = if guided { Tensor::stack(&[item.clone(), item]) } else { item };
        let eps = model.denoiser.predict_noise(&zb, &vec![t; n], &cond, &styles).expect("inputs checked");
        if guided {
            let m = z.len();
            cfg_combine(&eps.data()[..m], &eps.data()[m..], sampler.guidance_w).expect("equal halves")
        } else {
            eps.into_vec()
        }
    };
    let z0 = if sampler.clip_denoised && autoencoder.config.is_identity() {
        ddim_sample_clipped(z_t, &schedule, sampler.ddim_steps, 1.0, predict)?
    } else {
        ddim_sample(z_t, &schedule, sampler.ddim_steps, predict)?
    };
    autoencoder.decode(&Tensor::from_vec(&shape, z0))
}

struct Item {
    lm: LandmarkSet,
    record: DatasetRecord,
}

fn plan_item(pool: &Manifest, edits: &EditConfig, style_id: usize, item_seed: u64) -> Result<Item, Error> {
    let src = &pool.records[seed::rng(item_seed, "landmark-source", 0).random_range(0..pool.len())];
    let plan = sample_edit_plan(seed::derive(item_seed, "edit-plan", 0), edits)?;
    let lm = apply_plan(&pool.load_landmarks(src)?, &plan)?;
    let record = DatasetRecord {
        image_path: String::new(),
        landmarks_path: String::new(),
        style_id,
        edit_plan: Some(plan),
        seed: item_seed,
        source_landmarks: Some(src.landmarks_path.clone()),
    };
    Ok(Item { lm, record })
}

/// Build a synthetic multi-domain dataset from a stage-2 model.
///
/// Item `i` (styles in order, `per_style` each) uses `item_seed =
/// derive(seed, "synthetic", i)`. From it come the pool record whose
/// landmarks are edited, the two-edit plan, and the sampler noise. Each
/// record stores the source landmark path, the plan, the style and
/// `item_seed`; [`GENERATION_FILE`] stores the rest.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_dataset(
    model: &DiffusionModel,
    autoencoder: &Autoencoder,
    pool: &Manifest,
    styles: &[usize],
    per_style: usize,
    edits: &EditConfig,
    sampler: &SamplerConfig,
    seed: u64,
    out_dir: &Path,
    mut on_item: impl FnMut(usize, usize),
) -> Result<Manifest, Error> {
    model.expect_stage(Stage::Stage2)?;
    model.check_autoencoder(autoencoder)?;
    edits.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(&s) = styles.iter().find(|&&s| s == 0 || s >= model.setup.denoiser.style_vocab_size) {
        return Err(Error::BadStyle(s));
    }
    prepare_dirs(out_dir)?;
    let info = GenerationInfo {
        sampler: sampler.clone(),
        edits: edits.clone(),
        seed,
        styles: styles.to_vec(),
        per_style,
        pool_dir: pool.dir.clone(),
        pool_hash: dataset_hash(pool)?,
        model_hash: model_hash(model)?,
        autoencoder_hash: autoencoder_hash(autoencoder)?,
    };
    let info_path = out_dir.join(GENERATION_FILE);
    fs::write(&info_path, serde_json::to_vec_pretty(&info)?).map_err(|e| Error::io(&info_path, e))?;

    let total = styles.len() * per_style;
    let mut manifest = Manifest::new(out_dir);
    for (index, &style_id) in styles.iter().flat_map(|s| std::iter::repeat_n(s, per_style)).enumerate() {
        let item_seed = seed::derive(seed, "synthetic", index as u64);
        let Item { lm, mut record } = plan_item(pool, edits, style_id, item_seed)?;
        let img = sample_image(model, autoencoder, &lm, style_id, sampler, item_seed)?;
        let (image_path, landmarks_path) = write_pair(out_dir, index, &img, &lm)?;
        record.image_path = image_path;
        record.landmarks_path = landmarks_path;
        manifest.records.push(record);
        on_item(index, total);
    }
    manifest.write()?;
    Ok(manifest)
}

/// Regenerate record `index` of a generated dataset from its provenance.
/// Returns the edited landmarks and the sampled image.
pub fn replay_record(
    model: &DiffusionModel,
    autoencoder: &Autoencoder,
    manifest: &Manifest,
    index: usize,
) -> Result<(LandmarkSet, RgbImage), Error> {
    let info = GenerationInfo::read(&manifest.dir)?;
    if model_hash(model)? != info.model_hash || autoencoder_hash(autoencoder)? != info.autoencoder_hash {
        return Err(Error::BadConfig("model or autoencoder differs from the one that generated this dataset".into()));
    }
    let r = manifest.records.get(index).ok_or_else(|| Error::BadConfig(format!("no record {index}")))?;
    let (Some(plan), Some(src)) = (&r.edit_plan, &r.source_landmarks) else {
        return Err(Error::BadConfig(format!("record {index} has no generation provenance")));
    };
    let pool = Manifest::new(&info.pool_dir);
    let src_record = DatasetRecord {
        image_path: String::new(),
        landmarks_path: src.clone(),
        style_id: 0,
        edit_plan: None,
        seed: 0,
        source_landmarks: None,
    };
    let lm = apply_plan(&pool.load_landmarks(&src_record)?, plan)?;
    let img = sample_image(model, autoencoder, &lm, r.style_id, &info.sampler, r.seed)?;
    Ok((lm, img))
}

/// Replay record `index` and compare against the stored files byte for byte.
pub fn verify_replay(model: &DiffusionModel, autoencoder: &Autoencoder, manifest: &Manifest, index: usize) -> Result<(), Error> {
    let (lm, img) = replay_record(model, autoencoder, manifest, index)?;
    let r = &manifest.records[index];
    let stored_png = fs::read(manifest.resolve(&r.image_path)).map_err(|e| Error::io(&manifest.resolve(&r.image_path), e))?;
    if img.png_bytes()? != stored_png || manifest.load_landmarks(r)? != lm {
        return Err(Error::ReplayMismatch(r.image_path.clone()));
    }
    Ok(())
}
