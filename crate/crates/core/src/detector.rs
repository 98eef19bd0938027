//! Heatmap-regression landmark detector: Gaussian heatmap targets,
//! sub-pixel decoding, a single small hourglass and its training loop.

use ldlab_nn::layers::Conv2d;
use ldlab_nn::{Adam, AdamConfig, Float, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{conv_silu, ResBlock};
use crate::checkpoint::{Checkpoint, ModelKind, TrainingMeta};
use crate::image::RgbImage;
use crate::landmarks::{LandmarkSet, Point};
use crate::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("heatmap resolution {height}x{width} too small")]
    BadResolution { height: usize, width: usize },
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("map {0} has no positive finite maximum")]
    DegenerateMap(usize),
    #[error("heatmap shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
}

/// `n` maps of `height × width`, stored map-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub sigma_px: f64,
    pub data: Vec<f32>,
}

impl HeatmapStack {
    pub fn map(&self, i: usize) -> &[f32] {
        &self.data[i * self.height * self.width..(i + 1) * self.height * self.width]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.height, self.width]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[1, self.n, self.height, self.width], self.data.clone())
    }
}

/// `map_i(p) = exp(−‖p − x_i‖² / 2σ²)` on the heatmap grid, where landmark
/// `(x, y)` sits at grid coordinate `(x·width, y·height)` and grid point
/// `(col, row)` is the center of cell `(row, col)`.
pub fn encode_heatmaps(lm: &LandmarkSet, height: usize, width: usize, sigma_px: f64) -> Result<HeatmapStack, HeatmapError> {
    if height < 3 || width < 3 {
        return Err(HeatmapError::BadResolution { height, width });
    }
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(HeatmapError::BadSigma(sigma_px));
    }
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut data = Vec::with_capacity(lm.len() * height * width);
    for p in lm.points() {
        let (cx, cy) = (p.x * width as f64, p.y * height as f64);
        for row in 0..height {
            let dy2 = (row as f64 - cy).powi(2);
            for col in 0..width {
                data.push((-((col as f64 - cx).powi(2) + dy2) * inv).exp() as f32);
            }
        }
    }
    Ok(HeatmapStack { n: lm.len(), height, width, sigma_px, data })
}

/// Vertex offset of the parabola through `(−1, a)`, `(0, b)`, `(1, c)`,
/// fitted to log values when all three are positive.
fn parabola_offset(a: f32, b: f32, c: f32) -> f64 {
    let (a, b, c) = if a > 0.0 && b > 0.0 && c > 0.0 {
        ((a as f64).ln(), (b as f64).ln(), (c as f64).ln())
    } else {
        (a as f64, b as f64, c as f64)
    };
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Argmax plus separable quadratic refinement in its 3×3 neighborhood;
/// returns normalized coordinates.
pub fn decode_heatmaps(hm: &HeatmapStack) -> Result<LandmarkSet, HeatmapError> {
    let (h, w) = (hm.height, hm.width);
    let mut pts = Vec::with_capacity(hm.n);
    for i in 0..hm.n {
        let m = hm.map(i);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HeatmapError::DegenerateMap(i));
        }
        let (best, &peak) = m
            .iter()
            .enumerate()
            .fold((0, &f32::MIN), |acc, (j, v)| if *v > *acc.1 { (j, v) } else { acc });
        if peak <= 0.0 {
            return Err(HeatmapError::DegenerateMap(i));
        }
        let (row, col) = (best / w, best % w);
        let at = |r: usize, c: usize| m[r * w + c];
        let dx = if col > 0 && col + 1 < w { parabola_offset(at(row, col - 1), peak, at(row, col + 1)) } else { 0.0 };
        let dy = if row > 0 && row + 1 < h { parabola_offset(at(row - 1, col), peak, at(row + 1, col)) } else { 0.0 };
        pts.push(Point::new((col as f64 + dx) / w as f64, (row as f64 + dy) / h as f64));
    }
    Ok(LandmarkSet::from_points_unchecked(pts))
}

/// Mean squared error over all maps.
pub fn detector_loss(pred: &HeatmapStack, target: &HeatmapStack) -> Result<f64, HeatmapError> {
    if pred.shape() != target.shape() {
        return Err(HeatmapError::ShapeMismatch(pred.shape(), target.shape()));
    }
    let s: f64 = pred.data.iter().zip(&target.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    Ok(s / pred.data.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub input_size: usize,
    /// Input pixels per heatmap cell: 1, 2 or 4.
    pub heatmap_stride: usize,
    pub n_landmarks: usize,
    pub width: usize,
    /// Levels inside the hourglass.
    pub hourglass_depth: usize,
    /// Target Gaussian width in heatmap cells.
    pub sigma_px: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { input_size: 64, heatmap_stride: 4, n_landmarks: 68, width: 32, hourglass_depth: 2, sigma_px: 1.5 }
    }
}

impl DetectorConfig {
    pub fn heatmap_size(&self) -> usize {
        self.input_size / self.heatmap_stride
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if ![1, 2, 4].contains(&self.heatmap_stride) {
            return bad("heatmap_stride must be 1, 2 or 4");
        }
        if self.n_landmarks == 0 || self.width == 0 || self.hourglass_depth == 0 {
            return bad("detector sizes must be positive");
        }
        if self.heatmap_size() % (1 << self.hourglass_depth) != 0 || self.heatmap_size() < 3 {
            return bad("heatmap size must be divisible by 2^hourglass_depth");
        }
        if self.input_size % self.heatmap_stride != 0 {
            return bad("input_size must be divisible by heatmap_stride");
        }
        if !(self.sigma_px > 0.0) {
            return bad("sigma_px must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Hourglass {
    up: ResBlock,
    down: Conv2d,
    low1: ResBlock,
    inner: Option<Box<Hourglass>>,
    low2: ResBlock,
}

impl Hourglass {
    fn new<T: Float, R: Rng>(s: &mut ParamStore<T>, name: &str, w: usize, depth: usize, rng: &mut R) -> Self {
        Self {
            up: ResBlock::new(s, &format!("{name}.up"), w, w, None, rng),
            down: Conv2d::new(s, &format!("{name}.down"), w, w, 3, 2, rng),
            low1: ResBlock::new(s, &format!("{name}.low1"), w, w, None, rng),
            inner: (depth > 1).then(|| Box::new(Hourglass::new(s, &format!("{name}.inner"), w, depth - 1, rng))),
            low2: ResBlock::new(s, &format!("{name}.low2"), w, w, None, rng),
        }
    }

    fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let up = self.up.forward(g, x, None);
        let low = conv_silu(g, &self.down, x);
        let mut low = self.low1.forward(g, low, None);
        if let Some(inner) = &self.inner {
            low = inner.forward(g, low);
        }
        let low = self.low2.forward(g, low, None);
        let low = g.upsample2(low);
        g.add(up, low)
    }
}

#[derive(Clone, Debug)]
struct Net {
    stem: Conv2d,
    down: Vec<(Conv2d, ResBlock)>,
    hourglass: Hourglass,
    head: ResBlock,
    out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Detector<T = f32> {
    pub config: DetectorConfig,
    pub params: ParamStore<T>,
    net: Net,
}

impl<T: Float> Detector<T> {
    pub fn init(config: &DetectorConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let stem = Conv2d::new(&mut s, "stem", 3, w, 3, 1, &mut rng);
        let down = (0..config.heatmap_stride.trailing_zeros())
            .map(|i| {
                let conv = Conv2d::new(&mut s, &format!("pre{i}.down"), w, w, 3, 2, &mut rng);
                (conv, ResBlock::new(&mut s, &format!("pre{i}.res"), w, w, None, &mut rng))
            })
            .collect();
        let hourglass = Hourglass::new(&mut s, "hg", w, config.hourglass_depth, &mut rng);
        let head = ResBlock::new(&mut s, "head", w, w, None, &mut rng);
        let out = Conv2d::new(&mut s, "out", w, config.n_landmarks, 1, 1, &mut rng);
        Ok(Self { config: config.clone(), params: s, net: Net { stem, down, hourglass, head, out } })
    }

    /// Heatmap logits `[n, N, h/stride, w/stride]` for images `[n, 3, h, w]` in `[-1, 1]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let n = &self.net;
        let mut h = conv_silu(g, &n.stem, x);
        for (conv, res) in &n.down {
            h = conv_silu(g, conv, h);
            h = res.forward(g, h, None);
        }
        h = n.hourglass.forward(g, h);
        h = n.head.forward(g, h, None);
        n.out.forward(g, h)
    }

    pub fn cast<U: Float>(&self) -> Detector<U> {
        Detector { config: self.config.clone(), params: self.params.cast(), net: self.net.clone() }
    }
}

impl Detector<f32> {
    pub fn predict(&self, image: &RgbImage) -> Result<HeatmapStack, Error> {
        let s = self.config.input_size;
        if image.height != s || image.width != s {
            return Err(Error::ShapeMismatch(format!("image {}x{} for detector input {s}", image.height, image.width)));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(image.to_tensor());
        let out = self.forward(&mut g, x);
        let hs = self.config.heatmap_size();
        Ok(HeatmapStack {
            n: self.config.n_landmarks,
            height: hs,
            width: hs,
            sigma_px: self.config.sigma_px,
            data: g.value(out).data().to_vec(),
        })
    }

    /// Decoded landmarks. A finite map with no positive value is lifted so
    /// its peak is 1, so barely trained networks still yield their argmax.
    pub fn detect(&self, image: &RgbImage) -> Result<LandmarkSet, Error> {
        let mut hm = self.predict(image)?;
        let size = hm.height * hm.width;
        for m in hm.data.chunks_mut(size) {
            let hi = m.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if hi.is_finite() && hi <= 0.0 {
                m.iter_mut().for_each(|v| *v += 1.0 - hi);
            }
        }
        Ok(decode_heatmaps(&hm)?)
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Detector,
            config: serde_json::to_value(&self.config).expect("config serializes"),
            meta,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, Error> {
        let config: DetectorConfig = ck.config_as(ModelKind::Detector)?;
        let mut model = Self::init(&config, 0)?;
        ck.load_into(&mut model.params)?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self { steps: 3000, batch_size: 8, learning_rate: 1e-3, seed: 0, checkpoint_every: 0 }
    }
}

/// Training pairs with precomputed heatmap targets.
pub struct DetectorData {
    images: Vec<Tensor<f32>>,
    targets: Vec<Tensor<f32>>,
}

impl DetectorData {
    pub fn new(config: &DetectorConfig, pairs: &[(RgbImage, LandmarkSet)]) -> Result<Self, Error> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let hs = config.heatmap_size();
        let mut images = Vec::with_capacity(pairs.len());
        let mut targets = Vec::with_capacity(pairs.len());
        for (img, lm) in pairs {
            if img.height != config.input_size || img.width != config.input_size {
                return Err(Error::ShapeMismatch(format!("training image {}x{}", img.height, img.width)));
            }
            images.push(img.to_tensor());
            let hm = encode_heatmaps(lm, hs, hs, config.sigma_px)?;
            targets.push(hm.to_tensor());
        }
        Ok(Self { images, targets })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One optimizer step of heatmap MSE on a batch; returns the loss.
pub fn detector_step(model: &mut Detector<f32>, opt: &mut Adam<f32>, x: &Tensor<f32>, y: &Tensor<f32>) -> f64 {
    let (loss, mut grads) = {
        let mut g = Graph::new(&model.params);
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let pred = model.forward(&mut g, xv);
        let loss = g.mse(pred, yv);
        (g.value(loss).data()[0] as f64, g.backward(loss))
    };
    opt.step(&mut model.params, &mut grads);
    loss
}

/// Supervised heatmap training from `model`'s current parameters.
pub fn train_detector(
    model: &mut Detector<f32>,
    data: &DetectorData,
    cfg: &DetectorTrainConfig,
    purpose: &str,
    mut on_step: impl FnMut(usize, f64, &Detector<f32>),
) -> Vec<f64> {
    let mut opt = Adam::new(&model.params, AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });
    let mut rng = crate::seed::rng(cfg.seed, purpose, 0);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let x = Tensor::stack(&idx.iter().map(|&i| data.images[i].clone()).collect::<Vec<_>>());
        let y = Tensor::stack(&idx.iter().map(|&i| data.targets[i].clone()).collect::<Vec<_>>());
        let loss = detector_step(model, &mut opt, &x, &y);
        losses.push(loss);
        on_step(step, loss, model);
    }
    losses
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(points: &[(f64, f64)]) -> LandmarkSet {
        LandmarkSet::from_points_unchecked(points.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    #[test]
    fn on_grid_peak_and_exact_recovery() {
        let l = lm(&[(10.0 / 16.0, 4.0 / 16.0), (3.0 / 16.0, 12.0 / 16.0)]);
        let hm = encode_heatmaps(&l, 16, 16, 1.5).unwrap();
        assert_eq!(hm.map(0)[4 * 16 + 10], 1.0);
        let back = decode_heatmaps(&hm).unwrap();
        for (a, b) in back.points().iter().zip(l.points()) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn maps_are_independent() {
        let a = encode_heatmaps(&lm(&[(0.3, 0.3), (0.7, 0.7)]), 16, 16, 2.0).unwrap();
        let b = encode_heatmaps(&lm(&[(0.3, 0.3), (0.1, 0.9)]), 16, 16, 2.0).unwrap();
        assert_eq!(a.map(0), b.map(0));
    }

    #[test]
    fn gaussian_mass_matches_integral() {
        let hm = encode_heatmaps(&lm(&[(0.5, 0.5)]), 64, 64, 2.0).unwrap();
        let mass: f64 = hm.map(0).iter().map(|&v| v as f64).sum();
        let want = 2.0 * std::f64::consts::PI * 4.0;
        assert!((mass - want).abs() / want < 0.02);
    }

    #[test]
    fn degenerate_maps_rejected() {
        let hm = HeatmapStack { n: 1, height: 4, width: 4, sigma_px: 1.0, data: vec![0.0; 16] };
        assert_eq!(decode_heatmaps(&hm), Err(HeatmapError::DegenerateMap(0)));
        assert!(encode_heatmaps(&lm(&[(0.5, 0.5)]), 2, 16, 1.0).is_err());
    }

    #[test]
    fn loss_cases() {
        let a = encode_heatmaps(&lm(&[(0.5, 0.5)]), 8, 8, 1.0).unwrap();
        assert_eq!(detector_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 1.0);
        assert!((detector_loss(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn prediction_shapes() {
        for (stride, depth) in [(4, 2), (2, 1), (1, 3)] {
            let cfg = DetectorConfig { input_size: 32, heatmap_stride: stride, n_landmarks: 5, width: 8, hourglass_depth: depth, sigma_px: 1.0 };
            let det = Detector::<f32>::init(&cfg, 0).unwrap();
            let img = RgbImage::filled(32, 32, [0.2, 0.4, 0.6]);
            let hm = det.predict(&img).unwrap();
            assert_eq!(hm.shape(), [5, 32 / stride, 32 / stride]);
            assert!(hm.data.iter().all(|v| v.is_finite()));
            assert_eq!(det.predict(&img).unwrap(), hm);
        }
    }
}
