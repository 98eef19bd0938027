use ldlab_nn::Tensor;
use serde::{Deserialize, Serialize};

use super::{LandmarkError, LandmarkSet, Point, SemanticGroup, N_LANDMARKS};

/// Rendering parameters for [`rasterize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSpec {
    pub height: usize,
    pub width: usize,
    pub stroke_radius_px: f64,
    /// RGB color per [`SemanticGroup`], in `SemanticGroup::ALL` order.
    pub group_colors: [[f32; 3]; 7],
    pub draw_polylines: bool,
}

impl Default for RasterSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            stroke_radius_px: 0.8,
            group_colors: [
                [1.0, 1.0, 1.0], // jaw
                [1.0, 1.0, 0.0], // left brow
                [1.0, 0.5, 0.0], // right brow
                [0.0, 1.0, 0.0], // nose
                [0.0, 0.5, 1.0], // left eye
                [0.0, 1.0, 1.0], // right eye
                [1.0, 0.0, 0.0], // mouth
            ],
            draw_polylines: true,
        }
    }
}

/// `H×W×C` image with values in `[0, 1]`, stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ConditionImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, pixels: vec![0.0; height * width * channels] }
    }

    pub fn at(&self, row: usize, col: usize, c: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels + c]
    }

    pub fn is_lit(&self, row: usize, col: usize) -> bool {
        (0..self.channels).any(|c| self.at(row, col, c) != 0.0)
    }

    /// Planar `[1, C, H, W]` tensor with the same values.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; c * h * w];
        for i in 0..h * w {
            for ch in 0..c {
                data[ch * h * w + i] = self.pixels[i * c + ch];
            }
        }
        Tensor::from_vec(&[1, c, h, w], data)
    }

    fn paint(&mut self, row: usize, col: usize, color: &[f32; 3]) {
        let base = (row * self.width + col) * self.channels;
        for (c, &v) in color.iter().enumerate() {
            let px = &mut self.pixels[base + c];
            *px = px.max(v);
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, color: &[f32; 3]) {
        let (w, h) = (self.width as isize, self.height as isize);
        let nearest = (
            (cy.round() as isize).clamp(0, h - 1) as usize,
            (cx.round() as isize).clamp(0, w - 1) as usize,
        );
        self.paint(nearest.0, nearest.1, color);
        let (y0, y1) = (((cy - r).floor() as isize).max(0), ((cy + r).ceil() as isize).min(h - 1));
        let (x0, x1) = (((cx - r).floor() as isize).max(0), ((cx + r).ceil() as isize).min(w - 1));
        for row in y0..=y1 {
            for col in x0..=x1 {
                let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.paint(row as usize, col as usize, color);
                }
            }
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64), r: f64, color: &[f32; 3]) {
        let (w, h) = (self.width as isize, self.height as isize);
        let (y0, y1) = (((a.1.min(b.1) - r).floor() as isize).max(0), ((a.1.max(b.1) + r).ceil() as isize).min(h - 1));
        let (x0, x1) = (((a.0.min(b.0) - r).floor() as isize).max(0), ((a.0.max(b.0) + r).ceil() as isize).min(w - 1));
        let (vx, vy) = (b.0 - a.0, b.1 - a.1);
        let len2 = vx * vx + vy * vy;
        for row in y0..=y1 {
            for col in x0..=x1 {
                let (px, py) = (col as f64 - a.0, row as f64 - a.1);
                let t = if len2 > 0.0 { ((px * vx + py * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (dx, dy) = (px - t * vx, py - t * vy);
                if dx * dx + dy * dy <= r * r {
                    self.paint(row as usize, col as usize, color);
                }
            }
        }
    }
}

/// Draw landmarks as colored discs (and optional per-group polylines).
///
/// 68-point sets use one color per semantic group; any other count is drawn
/// as a single group in the first color. Channels are max-composited, so the
/// result does not depend on draw order.
pub fn rasterize(lm: &LandmarkSet, spec: &RasterSpec) -> Result<ConditionImage, LandmarkError> {
    if spec.height < 8 || spec.width < 8 {
        return Err(LandmarkError::BadResolution { height: spec.height, width: spec.width });
    }
    let mut img = ConditionImage::zeros(spec.height, spec.width, 3);
    let to_px = |p: Point| (p.x * spec.width as f64, p.y * spec.height as f64);
    let groups: Vec<(std::ops::Range<usize>, [f32; 3])> = if lm.len() == N_LANDMARKS {
        SemanticGroup::ALL.iter().map(|g| (g.range(), spec.group_colors[g.index()])).collect()
    } else {
        vec![(0..lm.len(), spec.group_colors[0])]
    };
    let r = spec.stroke_radius_px;
    for (range, color) in groups {
        let pts: Vec<(f64, f64)> = lm.points()[range].iter().map(|&p| to_px(p)).collect();
        if spec.draw_polylines {
            for pair in pts.windows(2) {
                img.segment(pair[0], pair[1], r, &color);
            }
        }
        for &(x, y) in &pts {
            img.disc(x, y, r, &color);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::validate;

    fn single_point_spec() -> RasterSpec {
        RasterSpec { stroke_radius_px: 1.0, draw_polylines: false, ..RasterSpec::default() }
    }

    #[test]
    fn empty_set_draws_nothing() {
        let lm = LandmarkSet::from_points_unchecked(vec![]);
        let img = rasterize(&lm, &RasterSpec::default()).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_only_lights_its_disc() {
        let lm = validate(&[(0.5, 0.5)], 1).unwrap().landmarks;
        let img = rasterize(&lm, &single_point_spec()).unwrap();
        let mut lit = 0;
        for row in 0..64 {
            for col in 0..64 {
                let d2 = (row as f64 - 32.0).powi(2) + (col as f64 - 32.0).powi(2);
                if img.is_lit(row, col) {
                    lit += 1;
                    assert!(d2 <= 1.0, "pixel ({row},{col}) lit outside the disc");
                }
            }
        }
        assert!(img.is_lit(32, 32));
        assert_eq!(lit, 5);
    }

    #[test]
    fn too_small_resolution_is_rejected() {
        let lm = LandmarkSet::from_points_unchecked(vec![]);
        let spec = RasterSpec { height: 7, ..RasterSpec::default() };
        assert!(matches!(rasterize(&lm, &spec), Err(LandmarkError::BadResolution { .. })));
    }

    #[test]
    fn nearest_pixel_lit_even_for_thin_strokes() {
        let lm = validate(&[(1.0, 1.0), (0.013, 0.77)], 2).unwrap().landmarks;
        let spec = RasterSpec { stroke_radius_px: 0.2, draw_polylines: false, ..RasterSpec::default() };
        let img = rasterize(&lm, &spec).unwrap();
        assert!(img.is_lit(63, 63));
        assert!(img.is_lit((0.77f64 * 64.0).round() as usize, (0.013f64 * 64.0).round() as usize));
    }
}
