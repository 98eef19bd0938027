use crate::image::RgbImage;
use crate::landmarks::{LandmarkError, LandmarkSet, Point, SemanticGroup, N_LANDMARKS};

use super::StyleSpec;

/// Vertical lift of the forehead above the brows, in normalized units.
const FOREHEAD: f64 = 0.12;
/// Isotropic regularizer on feature covariances, in px².
const COV_FLOOR: f64 = 0.5;

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn fill_polygon(&mut self, poly: &[(f64, f64)], color: [f32; 3]) {
        for row in 0..self.img.height {
            for col in 0..self.img.width {
                let (px, py) = (col as f64, row as f64);
                let mut inside = false;
                let mut j = poly.len() - 1;
                for i in 0..poly.len() {
                    let (a, b) = (poly[i], poly[j]);
                    if (a.1 > py) != (b.1 > py) && px < (b.0 - a.0) * (py - a.1) / (b.1 - a.1) + a.0 {
                        inside = !inside;
                    }
                    j = i;
                }
                if inside {
                    self.img.set(row, col, color);
                }
            }
        }
    }

    fn polyline(&mut self, pts: &[(f64, f64)], r: f64, color: [f32; 3]) {
        let (h, w) = (self.img.height as isize, self.img.width as isize);
        for pair in pts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let y0 = ((a.1.min(b.1) - r).floor() as isize).max(0);
            let y1 = ((a.1.max(b.1) + r).ceil() as isize).min(h - 1);
            let x0 = ((a.0.min(b.0) - r).floor() as isize).max(0);
            let x1 = ((a.0.max(b.0) + r).ceil() as isize).min(w - 1);
            let (vx, vy) = (b.0 - a.0, b.1 - a.1);
            let len2 = vx * vx + vy * vy;
            for row in y0..=y1 {
                for col in x0..=x1 {
                    let (px, py) = (col as f64 - a.0, row as f64 - a.1);
                    let t = if len2 > 0.0 { ((px * vx + py * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                    let (dx, dy) = (px - t * vx, py - t * vy);
                    if dx * dx + dy * dy <= r * r {
                        self.img.set(row as usize, col as usize, color);
                    }
                }
            }
        }
    }

    /// Filled Mahalanobis ellipse `{p : (p−c)ᵀ Σ⁻¹ (p−c) ≤ k²}`.
    fn ellipse(&mut self, c: (f64, f64), cov: [f64; 3], k: f64, color: [f32; 3]) {
        let [sxx, sxy, syy] = cov;
        let det = sxx * syy - sxy * sxy;
        let (ixx, ixy, iyy) = (syy / det, -sxy / det, sxx / det);
        let rx = k * sxx.sqrt();
        let ry = k * syy.sqrt();
        let (h, w) = (self.img.height as isize, self.img.width as isize);
        let y0 = ((c.1 - ry).floor() as isize).max(0);
        let y1 = ((c.1 + ry).ceil() as isize).min(h - 1);
        let x0 = ((c.0 - rx).floor() as isize).max(0);
        let x1 = ((c.0 + rx).ceil() as isize).min(w - 1);
        for row in y0..=y1 {
            for col in x0..=x1 {
                let (dx, dy) = (col as f64 - c.0, row as f64 - c.1);
                if ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy <= k * k {
                    self.img.set(row as usize, col as usize, color);
                }
            }
        }
    }
}

/// Centroid and regularized covariance of a landmark group, in pixels.
fn group_shape(pts: &[(f64, f64)]) -> ((f64, f64), [f64; 3]) {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = [COV_FLOOR, 0.0, COV_FLOOR];
    for p in pts {
        cov[0] += (p.0 - cx).powi(2) / n;
        cov[1] += (p.0 - cx) * (p.1 - cy) / n;
        cov[2] += (p.1 - cy).powi(2) / n;
    }
    ((cx, cy), cov)
}

/// Render a toy face for `lm` in `style` at `height × width`.
///
/// Pixel `(row, col)` has its center at normalized `(col / width, row / height)`,
/// the same convention as landmark rasterization. Eyes, nose and mouth are
/// filled ellipses centered on their landmark-group centroids, so their color
/// mass is aligned with the landmarks by construction.
pub fn render_face(lm: &LandmarkSet, style: &StyleSpec, height: usize, width: usize) -> Result<RgbImage, LandmarkError> {
    if height < 8 || width < 8 {
        return Err(LandmarkError::BadResolution { height, width });
    }
    if lm.len() != N_LANDMARKS {
        return Err(LandmarkError::WrongCount { expected: N_LANDMARKS, got: lm.len() });
    }
    let to_px = |p: &Point| (p.x * width as f64, p.y * height as f64);
    let px = |g: SemanticGroup| lm.points()[g.range()].iter().map(to_px).collect::<Vec<_>>();
    let mut canvas = Canvas { img: RgbImage::filled(height, width, style.background) };

    let jaw = px(SemanticGroup::Jaw);
    let mut skin = jaw.clone();
    let brows: Vec<Point> = lm.points()[SemanticGroup::LeftBrow.range().start..SemanticGroup::RightBrow.range().end].to_vec();
    for p in brows.iter().rev() {
        skin.push(to_px(&Point::new(p.x, p.y - FOREHEAD)));
    }
    canvas.fill_polygon(&skin, style.skin);

    let r = 0.5 * style.line_width_px;
    canvas.polyline(&jaw, r, style.outline);
    canvas.polyline(&px(SemanticGroup::LeftBrow), r, style.outline);
    canvas.polyline(&px(SemanticGroup::RightBrow), r, style.outline);

    let k = std::f64::consts::SQRT_2 * style.exaggeration;
    let features = [
        (SemanticGroup::Nose, style.nose, 0.8 * style.exaggeration),
        (SemanticGroup::Mouth, style.mouth, k),
        (SemanticGroup::LeftEye, style.eye, k),
        (SemanticGroup::RightEye, style.eye, k),
    ];
    for (group, color, scale) in features {
        let (c, cov) = group_shape(&px(group));
        canvas.ellipse(c, cov, scale, color);
    }
    Ok(canvas.img)
}
