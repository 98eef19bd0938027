use std::fs;
use std::path::Path;

use ldlab_nn::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{DiffusionModel, DiffusionSetup};
use super::runlog::{RunLog, RUN_LOG_FILE};
use crate::autoencoder::Autoencoder;
use crate::checkpoint::Stage;
use crate::diffusion::{forward_sample, NoiseSchedule};
use crate::procedural::Manifest;
use crate::seed;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing a record's style with the null token (stage 2 only).
    pub cfg_drop_prob: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Write `{stage}-{step}.ckpt` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Update only the control branch (`ctrl.*`) and keep the backbone fixed.
    pub freeze_backbone: bool,
    /// Decay of the exponential moving average of the weights that the
    /// trained model (and every checkpoint) carries; 0 keeps the raw weights.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 4,
            learning_rate: 2e-4,
            cfg_drop_prob: 0.1,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
            freeze_backbone: false,
            ema_decay: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::BadConfig(format!("learning_rate {}", self.learning_rate)));
        }
        if !(0.0..=0.5).contains(&self.cfg_drop_prob) {
            return Err(Error::BadConfig(format!("cfg_drop_prob {} outside [0, 0.5]", self.cfg_drop_prob)));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::BadConfig(format!("grad_clip {}", self.grad_clip)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::BadConfig(format!("ema_decay {} outside [0, 1)", self.ema_decay)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        let clip_norm = (self.grad_clip > 0.0).then_some(self.grad_clip);
        AdamConfig { lr: self.learning_rate, clip_norm, ..AdamConfig::default() }
    }
}

/// Encoded latents, condition images and style ids for every record of a
/// corpus, computed once before training.
pub struct TrainData {
    latents: Vec<Tensor<f32>>,
    conditions: Vec<Tensor<f32>>,
    styles: Vec<usize>,
}

impl TrainData {
    pub fn from_manifest(manifest: &Manifest, autoencoder: &Autoencoder, setup: &DiffusionSetup) -> Result<Self, Error> {
        if manifest.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if autoencoder.config != setup.autoencoder {
            return Err(Error::IncompatibleAutoencoder(format!(
                "setup expects {:?}, got {:?}",
                setup.autoencoder, autoencoder.config
            )));
        }
        let mut data = TrainData { latents: Vec::new(), conditions: Vec::new(), styles: Vec::new() };
        let mut size = None;
        for r in &manifest.records {
            let img = manifest.load_image(r)?;
            if img.width != img.height || size.is_some_and(|s| s != img.height) {
                return Err(Error::ShapeMismatch(format!("image {}x{} in corpus", img.height, img.width)));
            }
            if size.is_none() {
                setup.validate(img.height)?;
                size = Some(img.height);
            }
            if r.style_id >= setup.denoiser.style_vocab_size {
                return Err(Error::BadStyle(r.style_id));
            }
            data.latents.push(autoencoder.encode(&img)?);
            data.conditions.push(setup.condition(&manifest.load_landmarks(r)?)?);
            data.styles.push(r.style_id);
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// What the training loop did on one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub loss: f64,
    pub records: Vec<usize>,
    pub timesteps: Vec<usize>,
    /// Style ids fed to the denoiser, after null-token dropout.
    pub styles: Vec<usize>,
}

#[derive(Clone, Copy)]
enum StyleMode {
    Null,
    Record { drop_prob: f64 },
}

/// Style ids for a batch: the record styles, each replaced by the null
/// token 0 with probability `drop_prob`.
pub fn draw_styles<R: Rng + ?Sized>(rng: &mut R, record_styles: &[usize], drop_prob: f64) -> Vec<usize> {
    record_styles.iter().map(|&s| if rng.random::<f64>() < drop_prob { 0 } else { s }).collect()
}

struct Batch {
    z_t: Tensor<f32>,
    eps: Tensor<f32>,
    cond: Tensor<f32>,
    info: StepInfo,
}

fn draw_batch(rng: &mut ChaCha8Rng, data: &TrainData, schedule: &NoiseSchedule, cfg: &TrainConfig, mode: StyleMode, step: usize) -> Result<Batch, Error> {
    let records: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
    let timesteps: Vec<usize> = records.iter().map(|_| schedule.sample_timestep(rng)).collect();
    let styles = match mode {
        StyleMode::Null => vec![0; records.len()],
        StyleMode::Record { drop_prob } => {
            let own: Vec<usize> = records.iter().map(|&i| data.styles[i]).collect();
            draw_styles(rng, &own, drop_prob)
        }
    };
    let mut z_items = Vec::with_capacity(records.len());
    let mut eps_items = Vec::with_capacity(records.len());
    for (&i, &t) in records.iter().zip(&timesteps) {
        let z0 = &data.latents[i];
        let eps: Vec<f32> = (0..z0.numel()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let z_t = forward_sample(z0.data(), t, &eps, schedule)?;
        z_items.push(Tensor::from_vec(z0.shape(), z_t));
        eps_items.push(Tensor::from_vec(z0.shape(), eps));
    }
    let cond = Tensor::stack(&records.iter().map(|&i| data.conditions[i].clone()).collect::<Vec<_>>());
    Ok(Batch {
        z_t: Tensor::stack(&z_items),
        eps: Tensor::stack(&eps_items),
        cond,
        info: StepInfo { step, loss: 0.0, records, timesteps, styles },
    })
}

struct Outputs {
    log: RunLog,
    dir: Option<std::path::PathBuf>,
}

impl Outputs {
    fn new(out_dir: Option<&Path>) -> Result<Self, Error> {
        match out_dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                Ok(Self { log: RunLog::create(&d.join(RUN_LOG_FILE))?, dir: Some(d.to_path_buf()) })
            }
            None => Ok(Self { log: RunLog::sink(), dir: None }),
        }
    }
}

fn run_loop(
    model: &mut DiffusionModel,
    data: &TrainData,
    cfg: &TrainConfig,
    mode: StyleMode,
    stage: Stage,
    out_dir: Option<&Path>,
    on_step: &mut dyn FnMut(&StepInfo),
) -> Result<(), Error> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let schedule = model.setup.schedule.build()?;
    let mut out = Outputs::new(out_dir)?;
    let mut opt = Adam::new(&model.denoiser.params, cfg.adam());
    let mut rng = seed::rng(cfg.seed, &format!("{stage}-batches"), 0);
    let mut ema = (cfg.ema_decay > 0.0).then(|| model.denoiser.params.clone());
    let steps_before = model.meta.steps;
    model.meta.stage = Some(stage);
    model.meta.seed = cfg.seed;
    out.log.event("start", serde_json::json!({ "stage": stage.to_string(), "records": data.len(), "config": cfg }))?;
    for step in 0..cfg.steps {
        let mut batch = draw_batch(&mut rng, data, &schedule, cfg, mode, step)?;
        model.denoiser.check_inputs(&batch.z_t, &batch.info.timesteps, &batch.cond, &batch.info.styles)?;
        let (loss, mut grads) = {
            let mut g = Graph::new(&model.denoiser.params);
            let z = g.input(batch.z_t);
            let c = g.input(batch.cond);
            let e = g.input(batch.eps);
            let pred = model.denoiser.forward(&mut g, z, &batch.info.timesteps, c, &batch.info.styles);
            let loss = g.mse(pred, e);
            (g.value(loss).data()[0] as f64, g.backward(loss))
        };
        if !loss.is_finite() {
            return Err(Error::BadConfig(format!("training diverged at step {step} (loss {loss})")));
        }
        if cfg.freeze_backbone {
            let params = &model.denoiser.params;
            grads.retain(|id| params.name(id).starts_with("ctrl."));
        }
        opt.step(&mut model.denoiser.params, &mut grads);
        if let Some(ema) = &mut ema {
            // warm-up keeps early averages from being dominated by the start point
            let decay = cfg.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64)) as f32;
            update_ema(ema, &model.denoiser.params, decay);
        }
        model.meta.steps = steps_before + step as u64 + 1;
        batch.info.loss = loss;
        out.log.step(step, loss, cfg.learning_rate)?;
        on_step(&batch.info);
        if let Some(dir) = &out.dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                let mut snap = model.clone();
                if let Some(ema) = &ema {
                    snap.denoiser.params = ema.clone();
                }
                snap.to_checkpoint().write(&dir.join(format!("{stage}-{}.ckpt", step + 1)))?;
            }
        }
    }
    if let Some(ema) = ema {
        model.denoiser.params = ema;
    }
    out.log.event("end", serde_json::json!({ "steps": model.meta.steps }))?;
    Ok(())
}

/// `ema ← ema + (1 − decay)·(params − ema)`; parameters that did not move stay bitwise fixed.
fn update_ema(ema: &mut ParamStore<f32>, params: &ParamStore<f32>, decay: f32) {
    for id in params.ids() {
        let p = params.get(id).data();
        for (e, &v) in ema.get_mut(id).data_mut().iter_mut().zip(p) {
            *e += (1.0 - decay) * (v - *e);
        }
    }
}

/// First stage: learn landmark control on the base domain with the null
/// style token on every example. Starts from a fresh initialization
/// derived from `cfg.seed`.
pub fn train_stage1(
    manifest: &Manifest,
    autoencoder: &Autoencoder,
    setup: &DiffusionSetup,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepInfo),
) -> Result<DiffusionModel, Error> {
    let data = TrainData::from_manifest(manifest, autoencoder, setup)?;
    let mut model = DiffusionModel::init(setup, seed::derive(cfg.seed, "denoiser-init", 0))?;
    run_loop(&mut model, &data, cfg, StyleMode::Null, Stage::Stage1, out_dir, &mut on_step)?;
    Ok(model)
}

/// Second stage: fine-tune every parameter of a stage-1 model on the
/// multi-domain corpus with per-record style tokens and null-token dropout.
pub fn train_stage2(
    stage1: &DiffusionModel,
    manifest: &Manifest,
    autoencoder: &Autoencoder,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepInfo),
) -> Result<DiffusionModel, Error> {
    stage1.expect_stage(Stage::Stage1)?;
    if manifest.records.iter().any(|r| r.style_id == 0) {
        return Err(Error::BadStyle(0));
    }
    let data = TrainData::from_manifest(manifest, autoencoder, &stage1.setup)?;
    let mut model = stage1.clone();
    let mode = StyleMode::Record { drop_prob: cfg.cfg_drop_prob };
    run_loop(&mut model, &data, cfg, mode, Stage::Stage2, out_dir, &mut on_step)?;
    Ok(model)
}

/// Baseline without the base-domain stage: the stage-2 loop run from a
/// fresh initialization on the multi-domain corpus alone.
pub fn train_one_step(
    manifest: &Manifest,
    autoencoder: &Autoencoder,
    setup: &DiffusionSetup,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepInfo),
) -> Result<DiffusionModel, Error> {
    let data = TrainData::from_manifest(manifest, autoencoder, setup)?;
    let mut model = DiffusionModel::init(setup, seed::derive(cfg.seed, "denoiser-init", 0))?;
    let mode = StyleMode::Record { drop_prob: cfg.cfg_drop_prob };
    run_loop(&mut model, &data, cfg, mode, Stage::OneStep, out_dir, &mut on_step)?;
    Ok(model)
}
