//! Landmark accuracy metrics: NME, failure rate and AUC of the cumulative
//! error distribution (CED), plus the report produced by [`evaluate`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::Detector;
use crate::image::RgbImage;
use crate::landmarks::{interocular_distance, LandmarkError, LandmarkSet};
use crate::procedural::Manifest;
use crate::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction has {pred} points, ground truth {gt}")]
    CountMismatch { pred: usize, gt: usize },
    #[error("degenerate normalizer {0}")]
    DegenerateFace(f64),
    #[error("empty list")]
    EmptyList,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
}

/// Face-scale normalizer for NME.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Distance between the outer eye corners (36, 45) of the ground truth.
    #[default]
    InterOcular,
    /// Diagonal of the ground truth's bounding box.
    BoundingBoxDiagonal,
    /// A fixed value, for sets without the 68-point layout.
    Fixed(f64),
}

impl Normalizer {
    pub fn of(&self, gt: &LandmarkSet) -> Result<f64, EvalError> {
        let d = match *self {
            Normalizer::InterOcular => match interocular_distance(gt) {
                Ok(d) => d,
                Err(LandmarkError::DegenerateFace(d)) => return Err(EvalError::DegenerateFace(d)),
                Err(_) => return Err(EvalError::CountMismatch { pred: gt.len(), gt: crate::landmarks::N_LANDMARKS }),
            },
            Normalizer::BoundingBoxDiagonal => {
                let xs = gt.points().iter().map(|p| p.x);
                let ys = gt.points().iter().map(|p| p.y);
                let w = xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min);
                let h = ys.clone().fold(f64::MIN, f64::max) - ys.fold(f64::MAX, f64::min);
                w.hypot(h)
            }
            Normalizer::Fixed(d) => d,
        };
        if !(d >= 1e-6) {
            return Err(EvalError::DegenerateFace(d));
        }
        Ok(d)
    }
}

/// Inter-ocular normalized mean error.
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64, EvalError> {
    nme_with(pred, gt, Normalizer::InterOcular)
}

/// `(1/N)·Σ‖pred_i − gt_i‖ / d(gt)`.
pub fn nme_with(pred: &LandmarkSet, gt: &LandmarkSet, normalizer: Normalizer) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::CountMismatch { pred: pred.len(), gt: gt.len() });
    }
    if gt.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let d = normalizer.of(gt)?;
    let total: f64 = pred.points().iter().zip(gt.points()).map(|(a, b)| a.dist(*b)).sum();
    Ok(total / gt.len() as f64 / d)
}

fn sorted(nmes: &[f64]) -> Result<Vec<f64>, EvalError> {
    if nmes.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let mut v = nmes.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Fraction of samples with NME strictly above `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64, EvalError> {
    let v = sorted(nmes)?;
    Ok(v.iter().filter(|&&e| e > threshold).count() as f64 / v.len() as f64)
}

/// `∫₀^θ CED(e) de / θ` computed exactly: each sample with error `e_i < θ`
/// contributes a step of height `1/n` over `[e_i, θ]`.
pub fn auc(nmes: &[f64], threshold: f64) -> Result<f64, EvalError> {
    if !(threshold > 0.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let v = sorted(nmes)?;
    let area: f64 = v.iter().map(|&e| (threshold - e.max(0.0)).max(0.0)).sum();
    Ok(area / (v.len() as f64 * threshold))
}

/// CED knots `(e_(i), i/n)` over the sorted sample.
pub fn ced(nmes: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    let v = sorted(nmes)?;
    let n = v.len() as f64;
    Ok(v.iter().enumerate().map(|(i, &e)| (e, (i + 1) as f64 / n)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nme_mean: f64,
    pub fr_at_threshold: f64,
    pub auc_at_threshold: f64,
    pub threshold: f64,
    pub normalizer: Normalizer,
    pub per_sample_nme: Vec<f64>,
    pub ced: Vec<(f64, f64)>,
    pub config_hash: String,
    pub dataset_hash: String,
}

impl MetricsReport {
    pub fn from_nmes(nmes: Vec<f64>, threshold: f64, normalizer: Normalizer) -> Result<Self, EvalError> {
        let mean = sorted(&nmes)?.iter().sum::<f64>() / nmes.len() as f64;
        Ok(Self {
            nme_mean: mean,
            fr_at_threshold: failure_rate(&nmes, threshold)?,
            auc_at_threshold: auc(&nmes, threshold)?,
            threshold,
            normalizer,
            ced: ced(&nmes)?,
            per_sample_nme: nmes,
            config_hash: String::new(),
            dataset_hash: String::new(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `error,fraction` lines, with a header.
    pub fn ced_csv(&self) -> String {
        let mut s = String::from("error,fraction\n");
        for (e, f) in &self.ced {
            let _ = writeln!(s, "{e},{f}");
        }
        s
    }
}

/// Anything that maps an image to landmarks.
pub trait LandmarkPredictor {
    fn predict_landmarks(&self, image: &RgbImage) -> Result<LandmarkSet, Error>;

    /// Identifies the predictor's configuration in reports.
    fn config_fingerprint(&self) -> String {
        String::new()
    }
}

impl LandmarkPredictor for Detector<f32> {
    fn predict_landmarks(&self, image: &RgbImage) -> Result<LandmarkSet, Error> {
        self.detect(image)
    }

    fn config_fingerprint(&self) -> String {
        serde_json::to_string(&self.config).unwrap_or_default()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the manifest and every file it references.
pub fn dataset_hash(manifest: &Manifest) -> Result<String, Error> {
    let mut h = Sha256::new();
    for r in &manifest.records {
        h.update(serde_json::to_vec(r)?);
        for rel in [&r.image_path, &r.landmarks_path] {
            let path = manifest.resolve(rel);
            h.update(std::fs::read(&path).map_err(|e| Error::io(&path, e))?);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Run `predictor` on every record and aggregate the metrics.
pub fn evaluate(
    predictor: &impl LandmarkPredictor,
    manifest: &Manifest,
    threshold: f64,
    normalizer: Normalizer,
) -> Result<MetricsReport, Error> {
    if manifest.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut nmes = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let img = manifest.load_image(r)?;
        let gt = manifest.load_landmarks(r)?;
        let pred = predictor.predict_landmarks(&img)?;
        nmes.push(nme_with(&pred, &gt, normalizer).map_err(eval_err)?);
    }
    let mut report = MetricsReport::from_nmes(nmes, threshold, normalizer).map_err(eval_err)?;
    let cfg = format!("{}|{threshold}|{}", predictor.config_fingerprint(), serde_json::to_string(&normalizer)?);
    report.config_hash = sha256_hex(cfg.as_bytes());
    report.dataset_hash = dataset_hash(manifest)?;
    Ok(report)
}

fn eval_err(e: EvalError) -> Error {
    match e {
        EvalError::EmptyList => Error::EmptyList,
        other => Error::BadConfig(other.to_string()),
    }
}

/// SVG line plot of one or more labelled CED curves over `[0, threshold]`.
pub fn ced_svg(curves: &[(&str, &MetricsReport)], threshold: f64) -> String {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let (pw, ph) = (w - 2.0 * m, h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        m + ph,
        m + pw
    );
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.3}</text>"#,
            m + f * pw,
            m + ph + 14.0,
            f * threshold
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.1}</text>"#,
            m - 4.0,
            m + ph - f * ph + 3.0,
            f
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">NME</text>"#, m + pw / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.1})">fraction of images</text>"#,
        m + ph / 2.0,
        m + ph / 2.0
    );
    for (i, (label, report)) in curves.iter().enumerate() {
        let color = colors[i % colors.len()];
        let x = |e: f64| m + (e / threshold).clamp(0.0, 1.0) * pw;
        let y = |f: f64| m + ph - f * ph;
        let mut d = format!("M{:.2},{:.2}", x(0.0), y(0.0));
        let mut frac = 0.0;
        for &(e, f) in &report.ced {
            if e > threshold {
                break;
            }
            let _ = write!(d, " H{:.2} V{:.2}", x(e), y(f));
            frac = f;
        }
        let _ = write!(d, " H{:.2} V{:.2}", x(threshold), y(frac));
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{label} (AUC {:.3})</text>"#,
            m + 8.0,
            m + 14.0 + 14.0 * i as f64,
            report.auc_at_threshold
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Point;

    fn set(points: &[(f64, f64)]) -> LandmarkSet {
        LandmarkSet::from_points_unchecked(points.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    #[test]
    fn hand_computed_cases() {
        let gt = set(&[(0.0, 0.0), (1.0, 0.0)]);
        let pred = set(&[(0.2, 0.0), (1.0, 0.0)]);
        assert!((nme_with(&pred, &gt, Normalizer::Fixed(1.0)).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(nme_with(&gt, &gt, Normalizer::Fixed(1.0)).unwrap(), 0.0);
        assert_eq!(failure_rate(&[0.05, 0.15], 0.10).unwrap(), 0.5);
        assert_eq!(failure_rate(&[0.01, 0.02], 0.10).unwrap(), 0.0);
        assert_eq!(failure_rate(&[0.11, 0.2], 0.10).unwrap(), 1.0);
        assert_eq!(failure_rate(&[0.10], 0.10).unwrap(), 0.0);
        assert_eq!(auc(&[0.0, 0.0], 0.10).unwrap(), 1.0);
        assert_eq!(auc(&[0.10, 0.3], 0.10).unwrap(), 0.0);
        assert!((auc(&[0.05], 0.10).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(auc(&[], 0.1), Err(EvalError::EmptyList));
        assert_eq!(failure_rate(&[], 0.1), Err(EvalError::EmptyList));
        assert!(matches!(nme(&set(&[(0.0, 0.0)]), &gt), Err(EvalError::CountMismatch { .. })));
    }

    #[test]
    fn ced_is_monotone() {
        let c = ced(&[0.3, 0.1, 0.2, 0.1]).unwrap();
        assert!(c.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        assert_eq!(c.last().unwrap().1, 1.0);
    }

    #[test]
    fn svg_mentions_every_curve() {
        let a = MetricsReport::from_nmes(vec![0.02, 0.05, 0.2], 0.1, Normalizer::InterOcular).unwrap();
        let svg = ced_svg(&[("before", &a), ("after", &a)], 0.1);
        assert!(svg.starts_with("<svg") && svg.contains("before") && svg.contains("after"));
    }
}
