use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::landmarks::{LandmarkSet, Point, SemanticGroup, N_LANDMARKS};
use crate::seed;

/// Fixed reference face in normalized coordinates.
pub fn template_landmarks() -> LandmarkSet {
    let mut p = Vec::with_capacity(N_LANDMARKS);
    // jaw: lower half-ellipse from the left temple to the right temple
    for i in 0..17 {
        let phi = PI * i as f64 / 16.0;
        p.push(Point::new(0.5 - 0.34 * phi.cos(), 0.38 + 0.44 * phi.sin()));
    }
    for x0 in [0.20, 0.56] {
        for i in 0..5 {
            let u = i as f64 / 4.0;
            p.push(Point::new(x0 + 0.24 * u, 0.30 - 0.03 * (PI * u).sin()));
        }
    }
    for i in 0..4 {
        p.push(Point::new(0.5, 0.36 + 0.06 * i as f64));
    }
    for (x, y) in [(0.43, 0.58), (0.465, 0.595), (0.5, 0.60), (0.535, 0.595), (0.57, 0.58)] {
        p.push(Point::new(x, y));
    }
    for cx in [0.335, 0.665] {
        for k in 0..6 {
            let th = PI - k as f64 * PI / 3.0;
            p.push(Point::new(cx + 0.065 * th.cos(), 0.40 - 0.028 * th.sin()));
        }
    }
    for k in 0..12 {
        let th = PI - k as f64 * PI / 6.0;
        p.push(Point::new(0.5 + 0.12 * th.cos(), 0.70 - 0.045 * th.sin()));
    }
    for k in 0..8 {
        let th = PI - k as f64 * PI / 4.0;
        p.push(Point::new(0.5 + 0.08 * th.cos(), 0.70 - 0.015 * th.sin()));
    }
    LandmarkSet::from_points_unchecked(p)
}

/// Bounds of the random variation applied to the template. Every bound is
/// multiplied by `scale`; `scale = 0` reproduces the template exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceVariation {
    pub scale: f64,
    pub global_scale: f64,
    pub rotation_deg: f64,
    pub translation: f64,
    pub aspect: f64,
    pub jaw_width: f64,
    pub eye_size: f64,
    pub brow_height: f64,
    pub nose_length: f64,
    pub mouth_width: f64,
    pub mouth_height: f64,
}

impl Default for FaceVariation {
    fn default() -> Self {
        Self {
            scale: 1.0,
            global_scale: 0.08,
            rotation_deg: 6.0,
            translation: 0.04,
            aspect: 0.06,
            jaw_width: 0.08,
            eye_size: 0.15,
            brow_height: 0.02,
            nose_length: 0.1,
            mouth_width: 0.12,
            mouth_height: 0.02,
        }
    }
}

fn sym<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

fn scale_about(pts: &mut [Point], c: Point, sx: f64, sy: f64) {
    for p in pts {
        p.x = c.x + sx * (p.x - c.x);
        p.y = c.y + sy * (p.y - c.y);
    }
}

/// A plausible face drawn from the template plus bounded smooth variation.
/// Deterministic in `seed`, and always inside `[0, 1]²` for the default bounds.
pub fn sample_base_landmarks(seed: u64) -> LandmarkSet {
    sample_landmarks_with(seed, &FaceVariation::default())
}

pub fn sample_landmarks_with(seed: u64, v: &FaceVariation) -> LandmarkSet {
    let template = template_landmarks();
    if v.scale == 0.0 {
        return template;
    }
    let mut rng = seed::rng(seed, "base-landmarks", 0);
    let k = v.scale;
    let mut p = template.into_points();
    let group_centroid = |p: &[Point], g: SemanticGroup| crate::landmarks::centroid(&p[g.range()]);

    let jaw = 1.0 + sym(&mut rng, k * v.jaw_width);
    scale_about(&mut p[SemanticGroup::Jaw.range()], Point::new(0.5, 0.38), jaw, 1.0);

    let eye = 1.0 + sym(&mut rng, k * v.eye_size);
    for g in [SemanticGroup::LeftEye, SemanticGroup::RightEye] {
        let c = group_centroid(&p, g);
        scale_about(&mut p[g.range()], c, eye, eye);
    }

    let brow = sym(&mut rng, k * v.brow_height);
    for pt in &mut p[SemanticGroup::LeftBrow.range().start..SemanticGroup::RightBrow.range().end] {
        pt.y += brow;
    }

    let nose = 1.0 + sym(&mut rng, k * v.nose_length);
    scale_about(&mut p[SemanticGroup::Nose.range()], Point::new(0.5, 0.36), 1.0, nose);

    let (mw, mh) = (1.0 + sym(&mut rng, k * v.mouth_width), sym(&mut rng, k * v.mouth_height));
    let mc = group_centroid(&p, SemanticGroup::Mouth);
    scale_about(&mut p[SemanticGroup::Mouth.range()], mc, mw, 1.0);
    for pt in &mut p[SemanticGroup::Mouth.range()] {
        pt.y += mh;
    }

    let s = 1.0 + sym(&mut rng, k * v.global_scale);
    let a = sym(&mut rng, k * v.aspect);
    let th = sym(&mut rng, k * v.rotation_deg).to_radians();
    let (tx, ty) = (sym(&mut rng, k * v.translation), sym(&mut rng, k * v.translation));
    let (c, sn) = (th.cos(), th.sin());
    for pt in &mut p {
        let dx = (pt.x - 0.5) * s * (1.0 + a);
        let dy = (pt.y - 0.5) * s * (1.0 - a);
        *pt = Point::new(0.5 + c * dx - sn * dy + tx, 0.5 + sn * dx + c * dy + ty);
    }
    LandmarkSet::from_points_unchecked(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{interocular_distance, validate};

    #[test]
    fn template_layout() {
        let t = template_landmarks();
        assert_eq!(t.len(), 68);
        assert!((t.get(36).x - 0.27).abs() < 1e-12);
        assert!((t.get(45).x - 0.73).abs() < 1e-12);
        assert!((interocular_distance(&t).unwrap() - 0.46).abs() < 1e-12);
        assert!((t.get(8).y - 0.82).abs() < 1e-12);
    }

    #[test]
    fn zero_variation_is_the_template() {
        let v = FaceVariation { scale: 0.0, ..FaceVariation::default() };
        assert_eq!(sample_landmarks_with(5, &v), template_landmarks());
    }

    #[test]
    fn seeded_faces_validate_without_clamping() {
        for s in 0..1000 {
            let lm = sample_base_landmarks(s);
            let v = validate(lm.points(), 68).unwrap();
            assert!(!v.was_clamped(), "seed {s}");
        }
        assert_eq!(sample_base_landmarks(0), sample_base_landmarks(0));
        assert_ne!(sample_base_landmarks(0), sample_base_landmarks(1));
    }
}
