use ldlab_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, AutoencoderConfig};
use crate::checkpoint::{Checkpoint, ModelKind, Stage, TrainingMeta};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{build_schedule, NoiseSchedule, ScheduleKind};
use crate::landmarks::{rasterize, LandmarkSet, RasterSpec};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        // the usual 1e-4..0.02 over 1000 steps, rescaled to 200 steps
        Self { timesteps: 200, beta_start: 5e-4, beta_end: 0.1, kind: ScheduleKind::Linear }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, Error> {
        Ok(build_schedule(self.timesteps, self.beta_start, self.beta_end, self.kind)?)
    }
}

/// Everything besides the weights needed to train or sample a denoiser:
/// network shape, noise schedule, landmark rasterization and the
/// autoencoder it operates under. Stored as the checkpoint configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSetup {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub raster: RasterSpec,
    pub autoencoder: AutoencoderConfig,
}

impl Default for DiffusionSetup {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            raster: RasterSpec::default(),
            autoencoder: AutoencoderConfig::identity(),
        }
    }
}

impl DiffusionSetup {
    pub fn validate(&self, image_size: usize) -> Result<(), Error> {
        self.denoiser.validate()?;
        self.autoencoder.validate()?;
        self.schedule.build()?;
        let d = &self.denoiser;
        if self.autoencoder.latent_size(image_size) != d.latent_size
            || self.autoencoder.latent_channels != d.latent_channels
        {
            return Err(Error::IncompatibleAutoencoder(format!(
                "autoencoder gives {}x{}x{} latents for {image_size}px images; denoiser expects {}x{}x{}",
                self.autoencoder.latent_channels,
                self.autoencoder.latent_size(image_size),
                self.autoencoder.latent_size(image_size),
                d.latent_channels,
                d.latent_size,
                d.latent_size
            )));
        }
        if self.raster.height != d.condition_size || self.raster.width != d.condition_size {
            return Err(Error::BadConfig(format!(
                "raster {}x{} does not match condition_size {}",
                self.raster.height, self.raster.width, d.condition_size
            )));
        }
        Ok(())
    }

    /// Condition tensor `[1, C, H, W]` for a landmark set.
    pub fn condition(&self, lm: &LandmarkSet) -> Result<Tensor<f32>, Error> {
        Ok(rasterize(lm, &self.raster)?.to_tensor())
    }
}

/// A denoiser together with its setup and training metadata.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub setup: DiffusionSetup,
    pub denoiser: Denoiser<f32>,
    pub meta: TrainingMeta,
}

impl DiffusionModel {
    pub fn init(setup: &DiffusionSetup, seed: u64) -> Result<Self, Error> {
        let denoiser = Denoiser::init(&setup.denoiser, seed)?;
        let meta = TrainingMeta { stage: Some(Stage::Init), seed, ..TrainingMeta::default() };
        Ok(Self { setup: setup.clone(), denoiser, meta })
    }

    pub fn stage(&self) -> Stage {
        self.meta.stage.unwrap_or(Stage::Init)
    }

    pub fn expect_stage(&self, stage: Stage) -> Result<(), Error> {
        if self.stage() != stage {
            return Err(Error::WrongStage { expected: stage.to_string(), found: self.stage().to_string() });
        }
        Ok(())
    }

    /// Check that `ae` is the autoencoder this model was set up for.
    pub fn check_autoencoder(&self, ae: &Autoencoder) -> Result<(), Error> {
        if ae.config != self.setup.autoencoder {
            return Err(Error::IncompatibleAutoencoder(format!(
                "model expects {:?}, got {:?}",
                self.setup.autoencoder, ae.config
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Denoiser,
            config: serde_json::to_value(&self.setup).expect("setup serializes"),
            meta: self.meta.clone(),
            params: self.denoiser.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, Error> {
        let setup: DiffusionSetup = ck.config_as(ModelKind::Denoiser)?;
        let mut denoiser = Denoiser::init(&setup.denoiser, 0)?;
        ck.load_into(&mut denoiser.params)?;
        Ok(Self { setup, denoiser, meta: ck.meta.clone() })
    }

    pub fn read(path: &std::path::Path) -> Result<Self, Error> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
