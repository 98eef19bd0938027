use std::fs;
use std::path::Path;

use super::runlog::{RunLog, RUN_LOG_FILE};
use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::detector::{train_detector, Detector, DetectorConfig, DetectorData, DetectorTrainConfig};
use crate::image::RgbImage;
use crate::landmarks::LandmarkSet;
use crate::procedural::Manifest;
use crate::{seed, Error};

/// Every image/landmark pair of a manifest, in order.
pub fn load_pairs(manifest: &Manifest) -> Result<Vec<(RgbImage, LandmarkSet)>, Error> {
    manifest.records.iter().map(|r| Ok((manifest.load_image(r)?, manifest.load_landmarks(r)?))).collect()
}

fn run(
    model: &mut Detector<f32>,
    meta: &mut TrainingMeta,
    manifest: &Manifest,
    cfg: &DetectorTrainConfig,
    label: &str,
    out_dir: Option<&Path>,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<(), Error> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::BadConfig(format!("detector batch_size {} learning_rate {}", cfg.batch_size, cfg.learning_rate)));
    }
    let data = DetectorData::new(&model.config, &load_pairs(manifest)?)?;
    let mut log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            RunLog::create(&d.join(RUN_LOG_FILE))?
        }
        None => RunLog::sink(),
    };
    log.event("start", serde_json::json!({ "stage": label, "records": data.len(), "config": cfg }))?;
    let steps_before = meta.steps;
    meta.seed = cfg.seed;
    let mut failure = None;
    train_detector(model, &data, cfg, &format!("{label}-batches"), |step, loss, m| {
        if failure.is_some() {
            return;
        }
        on_step(step, loss);
        let mut meta = meta.clone();
        meta.steps = steps_before + step as u64 + 1;
        let res = log.step(step, loss, cfg.learning_rate).and_then(|_| match out_dir {
            Some(d) if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 => {
                Ok(m.to_checkpoint(meta).write(&d.join(format!("{label}-{}.ckpt", step + 1)))?)
            }
            _ => Ok(()),
        });
        failure = res.err();
    });
    if let Some(e) = failure {
        return Err(e);
    }
    meta.steps = steps_before + cfg.steps as u64;
    log.event("end", serde_json::json!({ "steps": meta.steps }))?;
    Ok(())
}

/// Train a detector from scratch on the base-domain corpus.
pub fn pretrain_detector(
    manifest: &Manifest,
    config: &DetectorConfig,
    cfg: &DetectorTrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Checkpoint, Error> {
    let mut model = Detector::<f32>::init(config, seed::derive(cfg.seed, "detector-init", 0))?;
    let mut meta = TrainingMeta::default();
    run(&mut model, &mut meta, manifest, cfg, "pretrain", out_dir, &mut on_step)?;
    meta.pretrained = true;
    Ok(model.to_checkpoint(meta))
}

/// Continue training a pretrained detector on a (synthetic) manifest.
pub fn finetune_detector(
    pretrained: &Checkpoint,
    manifest: &Manifest,
    cfg: &DetectorTrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Checkpoint, Error> {
    let mut model = Detector::from_checkpoint(pretrained)?;
    let mut meta = pretrained.meta.clone();
    if !meta.pretrained {
        return Err(Error::WrongStage { expected: "pretrained detector".into(), found: "untrained detector".into() });
    }
    run(&mut model, &mut meta, manifest, cfg, "finetune", out_dir, &mut on_step)?;
    meta.finetuned = true;
    Ok(model.to_checkpoint(meta))
}
