use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbImage;
use crate::landmarks::{LandmarkSet, SemanticGroup, N_LANDMARKS};

/// Margin of the dominant channel over the other two, beyond any positive
/// margin of the face's median color, at which a pixel always counts as eye
/// (blue), nose (green) or mouth (red). Mouth uses a larger margin because
/// skin tones are reddish.
pub const EYE_MARGIN: f32 = 0.25;
pub const NOSE_MARGIN: f32 = 0.25;
pub const MOUTH_MARGIN: f32 = 0.35;

/// Lowest threshold a faint feature can get. A feature's threshold is half
/// its strongest margin in the face, clamped to `[MIN_MARGIN, nominal]`.
pub const MIN_MARGIN: f32 = 0.12;

/// Largest RMS distance of a feature's pixels from their centroid, as a
/// fraction of the image width, for the feature to count as located.
/// Rendered features stay below 0.06.
pub const MAX_SPREAD: f64 = 0.125;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("no {0} pixels found")]
    FeatureNotFound(&'static str),
    #[error("{0} pixels are scattered ({1:.1} px RMS spread)")]
    FeatureDiffuse(&'static str, f64),
    #[error("alignment needs {N_LANDMARKS} landmarks, got {0}")]
    WrongCount(usize),
}

/// Distance in pixels between each feature's color-blob centroid and its
/// landmark-group centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub left_eye: f64,
    pub right_eye: f64,
    pub nose: f64,
    pub mouth: f64,
    pub mean: f64,
}

/// Dominance of each channel over the other two.
fn margins([r, g, b]: [f32; 3]) -> [f32; 3] {
    [r - g.max(b), g - r.max(b), b - r.max(g)]
}

#[derive(Default, Clone, Copy)]
struct Mass {
    n: f64,
    sx: f64,
    sy: f64,
    sq: f64,
}

impl Mass {
    fn add(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sq += x * x + y * y;
    }

    fn centroid(&self, name: &'static str, max_spread: f64) -> Result<(f64, f64), AlignmentError> {
        if self.n == 0.0 {
            return Err(AlignmentError::FeatureNotFound(name));
        }
        let (cx, cy) = (self.sx / self.n, self.sy / self.n);
        let spread = (self.sq / self.n - cx * cx - cy * cy).max(0.0).sqrt();
        if spread > max_spread {
            return Err(AlignmentError::FeatureDiffuse(name, spread));
        }
        Ok((cx, cy))
    }
}

/// Pixels within this distance outside the landmark hull still count as face.
const HULL_MARGIN: f64 = 2.0;

/// Convex hull of `pts`, counter-clockwise in image coordinates.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let base = hull.len();
        for &p in &pts {
            while hull.len() >= base + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
        if pass == 0 {
            pts.reverse();
        }
    }
    hull
}

/// Whether `p` lies inside the convex polygon `hull` grown by `margin`.
fn inside(hull: &[(f64, f64)], p: (f64, f64), margin: f64) -> bool {
    hull.iter().zip(hull.iter().cycle().skip(1)).all(|(&a, &b)| {
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let len = ex.hypot(ey);
        len == 0.0 || (ex * (p.1 - a.1) - ey * (p.0 - a.0)) / len >= -margin
    })
}

/// Centroid mass of the largest 8-connected component of `mask`.
fn largest_component(mask: &[bool], width: usize) -> Mass {
    let mut seen = vec![false; mask.len()];
    let mut best = Mass::default();
    let mut stack = Vec::new();
    let height = mask.len() / width;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut m = Mass::default();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (row, col) = (i / width, i % width);
            m.add(col as f64, row as f64);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                        continue;
                    }
                    let j = r as usize * width + c as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if m.n > best.n {
            best = m;
        }
    }
    best
}

/// Locate eyes, nose and mouth by color and compare with the landmarks.
///
/// Only pixels inside the convex hull of the landmarks are searched, and
/// a color cast of the face toward a feature color raises that feature's
/// threshold by the cast of the per-channel median there. A feature drawn
/// fainter than usual is thresholded at half its peak margin. Each
/// feature is the largest 8-connected blob of its color class there, so
/// scattered pixels of that color are ignored.
/// Eye-colored pixels are split into left and right by the vertical midline
/// between the two landmark eye centroids. A blob whose pixels spread more
/// than [`MAX_SPREAD`] of the image width is reported as diffuse.
pub fn measure_alignment(image: &RgbImage, lm: &LandmarkSet) -> Result<AlignmentReport, AlignmentError> {
    if lm.len() != N_LANDMARKS {
        return Err(AlignmentError::WrongCount(lm.len()));
    }
    let (w, h) = (image.width as f64, image.height as f64);
    let target = |g: SemanticGroup| {
        let c = lm.group_centroid(g);
        (c.x * w, c.y * h)
    };
    let (le, re) = (target(SemanticGroup::LeftEye), target(SemanticGroup::RightEye));
    let mid = 0.5 * (le.0 + re.0);
    let hull = convex_hull(lm.points().iter().map(|p| (p.x * w, p.y * h)).collect());
    let face: Vec<(usize, usize)> = (0..image.height)
        .flat_map(|row| (0..image.width).map(move |col| (row, col)))
        .filter(|&(row, col)| inside(&hull, (col as f64, row as f64), HULL_MARGIN))
        .collect();
    let reference = [0, 1, 2].map(|c| {
        let mut v: Vec<f32> = face.iter().map(|&(row, col)| image.get(row, col)[c]).collect();
        if v.is_empty() {
            return 0.0;
        }
        let mid = v.len() / 2;
        *v.select_nth_unstable_by(mid, f32::total_cmp).1
    });
    let base = margins(reference).map(|m| m.max(0.0));
    let rel: Vec<[f32; 3]> = face
        .iter()
        .map(|&(row, col)| {
            let m = margins(image.get(row, col));
            [0, 1, 2].map(|c| m[c] - base[c])
        })
        .collect();
    // features in order left eye, right eye, nose, mouth
    let channel = [2, 2, 1, 0];
    let nominal = [EYE_MARGIN, EYE_MARGIN, NOSE_MARGIN, MOUTH_MARGIN];
    let left = |col: usize| (col as f64) < mid;
    let owns = |k: usize, col: usize| k >= 2 || left(col) == (k == 0);
    let threshold: [f32; 4] = [0, 1, 2, 3].map(|k| {
        let peak = face.iter().zip(&rel).filter(|((_, col), _)| owns(k, *col)).map(|(_, r)| r[channel[k]]).fold(0.0, f32::max);
        (0.5 * peak).clamp(MIN_MARGIN, nominal[k])
    });
    let n = image.width * image.height;
    let mut masks = [vec![false; n], vec![false; n], vec![false; n], vec![false; n]];
    for (&(row, col), r) in face.iter().zip(&rel) {
        let eye = if left(col) { 0 } else { 1 };
        if let Some(k) = [eye, 2, 3].into_iter().find(|&k| r[channel[k]] >= threshold[k]) {
            masks[k][row * image.width + col] = true;
        }
    }
    let dist = |k: usize, name, g| -> Result<f64, AlignmentError> {
        let (cx, cy) = largest_component(&masks[k], image.width).centroid(name, MAX_SPREAD * w)?;
        let (tx, ty) = target(g);
        Ok((cx - tx).hypot(cy - ty))
    };
    let left_eye = dist(0, "left eye", SemanticGroup::LeftEye)?;
    let right_eye = dist(1, "right eye", SemanticGroup::RightEye)?;
    let nose = dist(2, "nose", SemanticGroup::Nose)?;
    let mouth = dist(3, "mouth", SemanticGroup::Mouth)?;
    Ok(AlignmentReport { left_eye, right_eye, nose, mouth, mean: (left_eye + right_eye + nose + mouth) / 4.0 })
}
