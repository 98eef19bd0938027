//! 68-point facial landmarks: validation, semantic groups, inter-ocular
//! normalization, rasterization into condition images, and the per-image
//! JSON file format.
//!
//! Coordinates are normalized fractions of image width/height. A point maps
//! to continuous pixel coordinates `(x·W, y·H)`, and pixel `(col, row)` has
//! its center at `(col, row)`.
//!
//! "Left" and "right" always refer to the image side, so the left eye is
//! indices 36–41 and the right eye 42–47.

mod file;
mod raster;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{read_landmarks, write_landmarks, LandmarkFile, LANDMARK_FILE_VERSION};
pub use raster::{rasterize, ConditionImage, RasterSpec};

/// Number of points in the fixed landmark convention.
pub const N_LANDMARKS: usize = 68;

/// Outer eye corners used for inter-ocular normalization.
pub const LEFT_OUTER_EYE_CORNER: usize = 36;
pub const RIGHT_OUTER_EYE_CORNER: usize = 45;

/// Coordinates inside this band but outside `[0, 1]` are clamped, not rejected.
pub const CLAMP_BAND: (f64, f64) = (-0.25, 1.25);

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("expected {expected} landmarks, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("landmark {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("landmark {index} at ({x}, {y}) lies outside the accepted band [-0.25, 1.25]")]
    OutOfRange { index: usize, x: f64, y: f64 },
    #[error("degenerate face: inter-ocular distance {0} is below 1e-6")]
    DegenerateFace(f64),
    #[error("bad raster resolution {height}x{width} (both sides must be >= 8)")]
    BadResolution { height: usize, width: usize },
    #[error("unsupported landmark file version {0}")]
    UnsupportedVersion(u32),
    #[error("landmark file declares {declared} points but lists {listed}")]
    CountMismatch { declared: usize, listed: usize },
    #[error("landmark file stores pixel coordinates; only normalized files are supported")]
    NotNormalized,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticGroup {
    Jaw,
    LeftBrow,
    RightBrow,
    Nose,
    LeftEye,
    RightEye,
    Mouth,
}

impl SemanticGroup {
    pub const ALL: [SemanticGroup; 7] = [
        SemanticGroup::Jaw,
        SemanticGroup::LeftBrow,
        SemanticGroup::RightBrow,
        SemanticGroup::Nose,
        SemanticGroup::LeftEye,
        SemanticGroup::RightEye,
        SemanticGroup::Mouth,
    ];

    pub fn range(self) -> Range<usize> {
        match self {
            SemanticGroup::Jaw => 0..17,
            SemanticGroup::LeftBrow => 17..22,
            SemanticGroup::RightBrow => 22..27,
            SemanticGroup::Nose => 27..36,
            SemanticGroup::LeftEye => 36..42,
            SemanticGroup::RightEye => 42..48,
            SemanticGroup::Mouth => 48..68,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticGroup::Jaw => "jaw",
            SemanticGroup::LeftBrow => "left_brow",
            SemanticGroup::RightBrow => "right_brow",
            SemanticGroup::Nose => "nose",
            SemanticGroup::LeftEye => "left_eye",
            SemanticGroup::RightEye => "right_eye",
            SemanticGroup::Mouth => "mouth",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&g| g == self).expect("listed")
    }

    /// Group owning landmark `i` of a 68-point set.
    pub fn of_index(i: usize) -> Option<SemanticGroup> {
        Self::ALL.into_iter().find(|g| g.range().contains(&i))
    }
}

/// An ordered set of normalized landmarks.
///
/// Sets built through [`validate`] have every coordinate in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    /// Wrap points without range checks. Callers are responsible for
    /// keeping coordinates in `[0, 1]`; see [`LandmarkSet::clamped`].
    pub fn from_points_unchecked(points: Vec<Point>) -> Self {
        Self { points }
    }

    /// Clamp every coordinate into `[0, 1]`.
    pub fn clamped(mut points: Vec<Point>) -> Self {
        for p in &mut points {
            p.x = p.x.clamp(0.0, 1.0);
            p.y = p.y.clamp(0.0, 1.0);
        }
        Self { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn centroid_of(&self, range: Range<usize>) -> Point {
        centroid(&self.points[range])
    }

    pub fn group_centroid(&self, group: SemanticGroup) -> Point {
        self.centroid_of(group.range())
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.points)
    }
}

pub(crate) fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    Point::new(sx / n, sy / n)
}

/// Output of [`validate`]: the clean set and the indices that were clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct Validated {
    pub landmarks: LandmarkSet,
    pub clamped: Vec<usize>,
}

impl Validated {
    pub fn was_clamped(&self) -> bool {
        !self.clamped.is_empty()
    }
}

/// Check count and finiteness, clamp mildly off-frame points into `[0, 1]`
/// and reject anything beyond [`CLAMP_BAND`].
pub fn validate<P: Into<Point> + Copy>(raw: &[P], n: usize) -> Result<Validated, LandmarkError> {
    if raw.len() != n {
        return Err(LandmarkError::WrongCount { expected: n, got: raw.len() });
    }
    let (lo, hi) = CLAMP_BAND;
    let mut points = Vec::with_capacity(n);
    let mut clamped = Vec::new();
    for (index, &p) in raw.iter().enumerate() {
        let p: Point = p.into();
        if !p.is_finite() {
            return Err(LandmarkError::NonFinite { index });
        }
        if p.x < lo || p.x > hi || p.y < lo || p.y > hi {
            return Err(LandmarkError::OutOfRange { index, x: p.x, y: p.y });
        }
        let c = Point::new(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0));
        if c != p {
            clamped.push(index);
        }
        points.push(c);
    }
    Ok(Validated { landmarks: LandmarkSet { points }, clamped })
}

/// Distance between the outer eye corners (indices 36 and 45).
pub fn interocular_distance(lm: &LandmarkSet) -> Result<f64, LandmarkError> {
    if lm.len() != N_LANDMARKS {
        return Err(LandmarkError::WrongCount { expected: N_LANDMARKS, got: lm.len() });
    }
    let d = lm.get(LEFT_OUTER_EYE_CORNER).dist(lm.get(RIGHT_OUTER_EYE_CORNER));
    if d < 1e-6 {
        return Err(LandmarkError::DegenerateFace(d));
    }
    Ok(d)
}
