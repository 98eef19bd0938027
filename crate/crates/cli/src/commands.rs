use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ldlab::autoencoder::{train_autoencoder, Autoencoder, AutoencoderConfig};
use ldlab::checkpoint::{Checkpoint, TrainingMeta};
use ldlab::detector::Detector;
use ldlab::evaluation::{ced_svg, evaluate, MetricsReport};
use ldlab::landmarks::read_landmarks;
use ldlab::pipelines::{self as pl, DiffusionModel, DiffusionSetup, RUN_LOG_FILE};
use ldlab::procedural::{build_corpus, build_stage1_corpus, build_stage2_corpus, CorpusSpec, Manifest};
use ldlab::seed::derive;

use crate::config::{RunConfig, FROZEN_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "ldlab", version, about = "Landmark-conditioned diffusion for multi-domain face landmark data")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration file (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CorpusKind {
    Stage1,
    Stage2,
    Validation,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a procedural corpus.
    GenCorpus {
        #[arg(long, value_enum)]
        kind: CorpusKind,
        /// Number of faces (stage1).
        #[arg(long)]
        n: Option<usize>,
        /// Faces per style (stage2, validation).
        #[arg(long)]
        per_style: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the image autoencoder on a corpus.
    TrainAutoencoder {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// First diffusion stage on the base-domain corpus.
    TrainStage1 {
        #[arg(long)]
        corpus: PathBuf,
        /// Autoencoder checkpoint; pixel space when omitted.
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Second diffusion stage, or the one-step baseline with --one-step.
    TrainStage2 {
        /// Stage-1 checkpoint (not used with --one-step).
        #[arg(long, required_unless_present = "one_step")]
        stage1: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        /// Train from initialization on the multi-domain corpus only.
        #[arg(long)]
        one_step: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate the synthetic multi-domain dataset from a stage-2 model.
    GenDataset {
        #[arg(long)]
        model: PathBuf,
        /// Corpus whose landmarks are edited (the stage-2 corpus).
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        #[arg(long)]
        per_style: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the landmark detector on the base domain.
    PretrainDetector {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a pretrained detector, optionally scoring it before and after.
    FinetuneDetector {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Validation manifest scored before and after fine-tuning.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a detector on a manifest.
    Eval {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write the CED curve as CSV.
        #[arg(long)]
        ced: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Plot CED curves of one or more reports as SVG.
    PlotCed {
        #[arg(long, required = true)]
        report: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample one image for a landmark file and style.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long, default_value_t = 0)]
        style: usize,
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare one-step, stage-1-only and two-stage models on a fixed grid.
    Ablate {
        #[arg(long)]
        one_step: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// A configuration or argument problem, reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Machine-readable code for an error chain.
pub fn error_code(e: &anyhow::Error) -> &'static str {
    use ldlab::Error as E;
    if e.downcast_ref::<UsageError>().is_some() {
        return "usage";
    }
    match e.downcast_ref::<E>() {
        Some(E::Io { .. }) => "io",
        Some(E::Json(_)) => "json",
        Some(E::Image(_)) => "image",
        Some(E::Landmark(_)) => "landmark",
        Some(E::Edit(_)) => "edit",
        Some(E::Diffusion(_)) => "diffusion",
        Some(E::Alignment(_)) => "alignment",
        Some(E::Heatmap(_)) => "heatmap",
        Some(E::Checkpoint(_)) => "checkpoint",
        Some(E::BadStyle(_)) => "bad_style",
        Some(E::EmptyCorpus) => "empty_corpus",
        Some(E::EmptyList) => "empty_list",
        Some(E::WrongStage { .. }) => "wrong_stage",
        Some(E::IncompatibleAutoencoder(_)) => "incompatible_autoencoder",
        Some(E::BadConfig(_)) => "bad_config",
        Some(E::ShapeMismatch(_)) => "shape_mismatch",
        Some(E::ReplayMismatch(_)) => "replay_mismatch",
        None => "runtime",
    }
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(format!("{e:#}")))
}

/// Number of worker threads requested through `LDLAB_THREADS`. Every
/// pipeline runs on one thread, so values above 1 only change this report.
fn threads() -> Result<usize> {
    match std::env::var("LDLAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(anyhow::anyhow!("LDLAB_THREADS={v:?} is not a positive integer"))),
    }
}

fn resolve(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let build = || -> Result<RunConfig> {
        let mut cfg = RunConfig::load(common.config.as_deref())?.apply_overrides(&common.set)?;
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        tweak(&mut cfg);
        let cfg = cfg.resolve_seeds();
        cfg.validate()?;
        Ok(cfg)
    };
    build().map_err(usage)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Write the resolved configuration into `dir`, or next to a file output as
/// `<stem>.run_config.toml`.
fn freeze(cfg: &RunConfig, command: &str, target: &Path, is_dir: bool) -> Result<()> {
    let path = if is_dir {
        create_dir(target)?;
        target.join(FROZEN_CONFIG)
    } else {
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        create_dir(parent)?;
        let stem = target.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
        parent.join(format!("{stem}.{FROZEN_CONFIG}"))
    };
    let text = format!("# ldlab {command}\n# global seed {}\n{}", cfg.seed, cfg.to_toml()?);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn progress(label: &str, step: usize, total: usize, loss: f64) {
    let every = (total / 20).max(1);
    if (step + 1) % every == 0 || step + 1 == total {
        eprintln!("{label}: step {}/{total} loss {loss:.5}", step + 1);
    }
}

fn load_autoencoder(path: Option<&Path>) -> Result<Autoencoder> {
    match path {
        None => Ok(Autoencoder::init(&AutoencoderConfig::identity(), 0)?),
        Some(p) => Ok(Autoencoder::from_checkpoint(&Checkpoint::read(p)?)?),
    }
}

/// The configured diffusion setup, adapted to the autoencoder's latent shape.
fn setup_for(cfg: &RunConfig, ae: &Autoencoder) -> DiffusionSetup {
    let mut s = cfg.diffusion.clone();
    s.autoencoder = ae.config.clone();
    s.denoiser.latent_channels = ae.config.latent_channels;
    s.denoiser.latent_size = ae.config.latent_size(cfg.corpus.resolution);
    s
}

fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    ck.write(path).with_context(|| format!("writing {}", path.display()))
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(Manifest::read(path)?)
}

fn append_event(dir: &Path, event: &str, data: serde_json::Value) -> Result<()> {
    let path = dir.join(RUN_LOG_FILE);
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    writeln!(f, "{}", serde_json::json!({ "event": event, "data": data }))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = threads()?;
    if threads > 1 {
        eprintln!("ldlab: LDLAB_THREADS={threads}; pipelines run single-threaded");
    }
    match cli.command {
        Command::GenCorpus { kind, n, per_style, out, common } => {
            let cfg = resolve(&common, |c| {
                if let Some(n) = n {
                    c.corpus.stage1_n = n;
                }
                if let Some(p) = per_style {
                    match kind {
                        CorpusKind::Validation => c.corpus.validation_per_style = p,
                        _ => c.corpus.stage2_per_style = p,
                    }
                }
            })?;
            freeze(&cfg, "gen-corpus", &out, true)?;
            let c = &cfg.corpus;
            let m = match kind {
                CorpusKind::Stage1 => build_stage1_corpus(c.stage1_n, cfg.seed, &out, c.resolution)?,
                CorpusKind::Stage2 => build_stage2_corpus(c.stage2_per_style, &c.styles, cfg.seed, &out, c.resolution)?,
                CorpusKind::Validation => {
                    let spec = CorpusSpec {
                        purpose: "validation-corpus",
                        styles: &c.styles,
                        per_style: c.validation_per_style,
                        resolution: c.resolution,
                        edits: Some(&c.validation_edits),
                    };
                    build_corpus(&spec, cfg.seed, &out)?
                }
            };
            eprintln!("wrote {} records to {}", m.len(), m.path().display());
        }
        Command::TrainAutoencoder { corpus, out, common } => {
            let cfg = resolve(&common, |_| {})?;
            freeze(&cfg, "train-autoencoder", &out, true)?;
            let m = read_manifest(&corpus)?;
            let images = m.records.iter().map(|r| m.load_image(r)).collect::<Result<Vec<_>, _>>()?;
            let train = &cfg.autoencoder.train;
            let (ae, losses) =
                train_autoencoder(&images, &cfg.autoencoder.model, train, |s, l| progress("autoencoder", s, train.steps, l))?;
            let meta = TrainingMeta { steps: losses.len() as u64, seed: train.seed, ..TrainingMeta::default() };
            write_checkpoint(&ae.to_checkpoint(meta), &out.join("autoencoder.ckpt"))?;
        }
        Command::TrainStage1 { corpus, autoencoder, steps, out, common } => {
            let cfg = resolve(&common, |c| {
                if let Some(s) = steps {
                    c.stage1.steps = s;
                }
            })?;
            freeze(&cfg, "train-stage1", &out, true)?;
            let ae = load_autoencoder(autoencoder.as_deref())?;
            let m = read_manifest(&corpus)?;
            let total = cfg.stage1.steps;
            let model = pl::train_stage1(&m, &ae, &setup_for(&cfg, &ae), &cfg.stage1, Some(&out), |s| {
                progress("stage1", s.step, total, s.loss)
            })?;
            write_checkpoint(&model.to_checkpoint(), &out.join("stage1.ckpt"))?;
        }
        Command::TrainStage2 { stage1, corpus, autoencoder, one_step, steps, out, common } => {
            let cfg = resolve(&common, |c| {
                if let Some(s) = steps {
                    c.stage2.steps = s;
                    c.one_step.steps = s;
                }
            })?;
            freeze(&cfg, "train-stage2", &out, true)?;
            let ae = load_autoencoder(autoencoder.as_deref())?;
            let m = read_manifest(&corpus)?;
            let model = if one_step {
                let total = cfg.one_step.steps;
                pl::train_one_step(&m, &ae, &setup_for(&cfg, &ae), &cfg.one_step, Some(&out), |s| {
                    progress("one-step", s.step, total, s.loss)
                })?
            } else {
                let s1 = DiffusionModel::read(stage1.as_deref().context("--stage1 is required")?)?;
                let total = cfg.stage2.steps;
                pl::train_stage2(&s1, &m, &ae, &cfg.stage2, Some(&out), |s| progress("stage2", s.step, total, s.loss))?
            };
            let name = if one_step { "one_step.ckpt" } else { "stage2.ckpt" };
            write_checkpoint(&model.to_checkpoint(), &out.join(name))?;
        }
        Command::GenDataset { model, pool, autoencoder, per_style, out, common } => {
            let cfg = resolve(&common, |c| {
                if let Some(p) = per_style {
                    c.generation.per_style = p;
                }
            })?;
            freeze(&cfg, "gen-dataset", &out, true)?;
            let ae = load_autoencoder(autoencoder.as_deref())?;
            let model = DiffusionModel::read(&model)?;
            let pool = read_manifest(&pool)?;
            let g = &cfg.generation;
            let m = pl::generate_synthetic_dataset(&model, &ae, &pool, &g.styles, g.per_style, &g.edits, &g.sampler, g.seed, &out, |i, n| {
                if (i + 1) % 25 == 0 || i + 1 == n {
                    eprintln!("gen-dataset: {}/{n}", i + 1);
                }
            })?;
            eprintln!("wrote {} records to {}", m.len(), m.path().display());
        }
        Command::PretrainDetector { corpus, steps, out, common } => {
            let cfg = resolve(&common, |c| {
                if let Some(s) = steps {
                    c.detector.pretrain.steps = s;
                }
            })?;
            freeze(&cfg, "pretrain-detector", &out, true)?;
            let m = read_manifest(&corpus)?;
            let d = &cfg.detector;
            let total = d.pretrain.steps;
            let ck = pl::pretrain_detector(&m, &d.model, &d.pretrain, Some(&out), |s, l| progress("pretrain", s, total, l))?;
            write_checkpoint(&ck, &out.join("detector.ckpt"))?;
        }
        Command::FinetuneDetector { detector, corpus, validation, steps, out, common } => {
            let cfg = resolve(&common, |c| {
                if let Some(s) = steps {
                    c.detector.finetune.steps = s;
                }
            })?;
            freeze(&cfg, "finetune-detector", &out, true)?;
            let pre = Checkpoint::read(&detector)?;
            let m = read_manifest(&corpus)?;
            let total = cfg.detector.finetune.steps;
            let post = pl::finetune_detector(&pre, &m, &cfg.detector.finetune, Some(&out), |s, l| progress("finetune", s, total, l))?;
            write_checkpoint(&post, &out.join("detector.ckpt"))?;
            if let Some(v) = validation {
                let v = read_manifest(&v)?;
                let score = |ck: &Checkpoint, name: &str| -> Result<MetricsReport> {
                    let r = evaluate(&Detector::from_checkpoint(ck)?, &v, cfg.eval.threshold, cfg.eval.normalizer)?;
                    r.write_json(&out.join(name))?;
                    Ok(r)
                };
                let (a, b) = (score(&pre, "validation_pre.json")?, score(&post, "validation_post.json")?);
                let data = serde_json::json!({
                    "threshold": cfg.eval.threshold,
                    "pre": { "nme": a.nme_mean, "fr": a.fr_at_threshold, "auc": a.auc_at_threshold },
                    "post": { "nme": b.nme_mean, "fr": b.fr_at_threshold, "auc": b.auc_at_threshold },
                });
                append_event(&out, "validation", data)?;
                eprintln!(
                    "validation NME {:.4} -> {:.4}, FR {:.4} -> {:.4}",
                    a.nme_mean, b.nme_mean, a.fr_at_threshold, b.fr_at_threshold
                );
            }
        }
        Command::Eval { detector, manifest, report, ced, common } => {
            let cfg = resolve(&common, |_| {})?;
            freeze(&cfg, "eval", &report, false)?;
            let det = Detector::from_checkpoint(&Checkpoint::read(&detector)?)?;
            let r = evaluate(&det, &read_manifest(&manifest)?, cfg.eval.threshold, cfg.eval.normalizer)?;
            r.write_json(&report)?;
            if let Some(p) = ced {
                fs::write(&p, r.ced_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            eprintln!("NME {:.4}  FR {:.4}  AUC {:.4}", r.nme_mean, r.fr_at_threshold, r.auc_at_threshold);
        }
        Command::PlotCed { report, out, common } => {
            let cfg = resolve(&common, |_| {})?;
            freeze(&cfg, "plot-ced", &out, false)?;
            let reports = report.iter().map(|p| MetricsReport::read_json(p)).collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<String> =
                report.iter().map(|p| p.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string()).collect();
            let curves: Vec<(&str, &MetricsReport)> = labels.iter().map(String::as_str).zip(&reports).collect();
            fs::write(&out, ced_svg(&curves, cfg.eval.threshold)).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Sample { model, landmarks, style, autoencoder, out, common } => {
            let cfg = resolve(&common, |_| {})?;
            freeze(&cfg, "sample", &out, false)?;
            let ae = load_autoencoder(autoencoder.as_deref())?;
            let model = DiffusionModel::read(&model)?;
            let lm = read_landmarks(&landmarks)?;
            let img = pl::sample_image(&model, &ae, &lm, style, &cfg.generation.sampler, derive(cfg.seed, "sample", 0))?;
            img.write_png(&out)?;
        }
        Command::Ablate { one_step, stage1, stage2, autoencoder, out, common } => {
            let cfg = resolve(&common, |_| {})?;
            freeze(&cfg, "ablate", &out, true)?;
            let ae = load_autoencoder(autoencoder.as_deref())?;
            let (a, b, c) = (DiffusionModel::read(&one_step)?, DiffusionModel::read(&stage1)?, DiffusionModel::read(&stage2)?);
            let report = pl::run_ablation(&a, &b, &c, &ae, &cfg.ablation, &out, |i, n| {
                if (i + 1) % 8 == 0 || i + 1 == n {
                    eprintln!("ablate: {}/{n}", i + 1);
                }
            })?;
            for m in &report.models {
                eprintln!("{:<12} mean alignment error {:.3} px ({} missing)", m.name, m.mean_error_px, m.missing);
            }
        }
    }
    Ok(())
}

