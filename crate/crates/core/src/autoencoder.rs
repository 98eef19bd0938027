//! Image ↔ latent autoencoder with an identity mode.
//!
//! Images enter as `[0, 1]` RGB and are remapped to `[-1, 1]`. With
//! `downsample_factor = 1` the encoder and decoder are exactly that affine
//! remap and its inverse; factors 2 and 4 use a small convolutional pair
//! trained with a plain L2 reconstruction loss.

use ldlab_nn::layers::Conv2d;
use ldlab_nn::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::conv_silu;
use crate::checkpoint::{Checkpoint, ModelKind, TrainingMeta};
use crate::image::RgbImage;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// 1 (identity), 2 or 4.
    pub downsample_factor: usize,
    pub latent_channels: usize,
    pub base_width: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl AutoencoderConfig {
    pub fn identity() -> Self {
        Self { downsample_factor: 1, latent_channels: 3, base_width: 0 }
    }

    pub fn is_identity(&self) -> bool {
        self.downsample_factor == 1
    }

    pub fn validate(&self) -> Result<(), Error> {
        match self.downsample_factor {
            1 if self.latent_channels != 3 => Err(Error::BadConfig("identity autoencoder needs 3 latent channels".into())),
            1 => Ok(()),
            2 | 4 if self.latent_channels > 0 && self.base_width > 0 => Ok(()),
            2 | 4 => Err(Error::BadConfig("autoencoder widths must be positive".into())),
            f => Err(Error::BadConfig(format!("downsample_factor {f} not in {{1, 2, 4}}"))),
        }
    }

    /// Latent side length for a square image of side `image_size`.
    pub fn latent_size(&self, image_size: usize) -> usize {
        image_size / self.downsample_factor
    }
}

#[derive(Clone, Debug)]
struct Net {
    enc: Vec<Conv2d>,
    dec: Vec<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub params: ParamStore<f32>,
    net: Net,
}

impl Autoencoder {
    pub fn init(config: &AutoencoderConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Net { enc: Vec::new(), dec: Vec::new() };
        if !config.is_identity() {
            let (w, lc) = (config.base_width, config.latent_channels);
            let levels = config.downsample_factor.trailing_zeros() as usize;
            net.enc.push(Conv2d::new(&mut s, "enc.in", 3, w, 3, 1, &mut rng));
            for i in 0..levels {
                net.enc.push(Conv2d::new(&mut s, &format!("enc.down{i}"), w, w, 3, 2, &mut rng));
            }
            net.enc.push(Conv2d::new(&mut s, "enc.out", w, lc, 3, 1, &mut rng));
            net.dec.push(Conv2d::new(&mut s, "dec.in", lc, w, 3, 1, &mut rng));
            for i in 0..levels {
                net.dec.push(Conv2d::new(&mut s, &format!("dec.up{i}"), w, w, 3, 1, &mut rng));
            }
            net.dec.push(Conv2d::new(&mut s, "dec.out", w, 3, 3, 1, &mut rng));
        }
        Ok(Self { config: config.clone(), params: s, net })
    }

    fn check_image(&self, h: usize, w: usize) -> Result<(), Error> {
        let f = self.config.downsample_factor;
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::Image(crate::image::ImageError::Shape(vec![1, 3, h, w])));
        }
        Ok(())
    }

    fn encode_graph(&self, g: &mut Graph<'_, f32>, x: Var) -> Var {
        let n = self.net.enc.len();
        let mut h = x;
        for (i, conv) in self.net.enc.iter().enumerate() {
            h = if i + 1 < n { conv_silu(g, conv, h) } else { conv.forward(g, h) };
        }
        h
    }

    fn decode_graph(&self, g: &mut Graph<'_, f32>, z: Var) -> Var {
        let n = self.net.dec.len();
        let mut h = z;
        for (i, conv) in self.net.dec.iter().enumerate() {
            if i > 0 && i + 1 < n {
                h = g.upsample2(h);
            }
            h = if i + 1 < n { conv_silu(g, conv, h) } else { conv.forward(g, h) };
        }
        h
    }

    /// Encode a batch `[n, 3, h, w]` of images already in `[-1, 1]`.
    pub fn encode_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, Error> {
        let (_, _, h, w) = x.dims4();
        self.check_image(h, w)?;
        if self.config.is_identity() {
            return Ok(x.clone());
        }
        let mut g = Graph::new(&self.params);
        let v = g.input(x.clone());
        let out = self.encode_graph(&mut g, v);
        Ok(g.value(out).clone())
    }

    /// Decode a latent batch to `[-1, 1]` image tensors (clamped).
    pub fn decode_tensor(&self, z: &Tensor<f32>) -> Result<Tensor<f32>, Error> {
        let s = z.shape();
        if s.len() != 4 || s[1] != self.config.latent_channels {
            return Err(Error::ShapeMismatch(format!("latent {s:?} for {} channels", self.config.latent_channels)));
        }
        let out = if self.config.is_identity() {
            z.clone()
        } else {
            let mut g = Graph::new(&self.params);
            let v = g.input(z.clone());
            let out = self.decode_graph(&mut g, v);
            g.value(out).clone()
        };
        Ok(out.map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn encode(&self, image: &RgbImage) -> Result<Tensor<f32>, Error> {
        self.encode_tensor(&image.to_tensor())
    }

    /// Decode to an image quantized to 8 bits per channel, the precision
    /// images are stored at. In identity mode this inverts [`encode`] exactly
    /// on 8-bit images.
    ///
    /// [`encode`]: Autoencoder::encode
    pub fn decode(&self, z: &Tensor<f32>) -> Result<RgbImage, Error> {
        let t = self.decode_tensor(z)?;
        Ok(RgbImage::from_tensor(&t)?.quantized())
    }

    /// Mean squared reconstruction error of a `[-1, 1]` batch, with gradients.
    fn loss_and_grads(&self, x: &Tensor<f32>) -> (f64, ldlab_nn::Gradients<f32>) {
        let mut g = Graph::new(&self.params);
        let v = g.input(x.clone());
        let z = self.encode_graph(&mut g, v);
        let y = self.decode_graph(&mut g, z);
        let loss = g.mse(y, v);
        (g.value(loss).data()[0] as f64, g.backward(loss))
    }

    pub fn reconstruction_loss(&self, x: &Tensor<f32>) -> f64 {
        if self.config.is_identity() {
            return 0.0;
        }
        self.loss_and_grads(x).0
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Autoencoder,
            config: serde_json::to_value(&self.config).expect("config serializes"),
            meta,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, Error> {
        let config: AutoencoderConfig = ck.config_as(ModelKind::Autoencoder)?;
        let mut model = Self::init(&config, 0)?;
        ck.load_into(&mut model.params)?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AutoencoderTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 8, learning_rate: 1e-3, seed: 0 }
    }
}

/// Train on `images` with Adam, returning the model and the per-step losses.
/// Identity configurations have nothing to train and return immediately.
pub fn train_autoencoder(
    images: &[RgbImage],
    config: &AutoencoderConfig,
    train: &AutoencoderTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(Autoencoder, Vec<f64>), Error> {
    if images.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = Autoencoder::init(config, crate::seed::derive(train.seed, "autoencoder-init", 0))?;
    if config.is_identity() {
        return Ok((model, Vec::new()));
    }
    let tensors: Vec<Tensor<f32>> = images.iter().map(RgbImage::to_tensor).collect();
    let mut opt = Adam::new(&model.params, AdamConfig { lr: train.learning_rate, ..AdamConfig::default() });
    let mut rng = crate::seed::rng(train.seed, "autoencoder-batches", 0);
    let mut losses = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let batch: Vec<Tensor<f32>> =
            (0..train.batch_size).map(|_| tensors[rng.random_range(0..tensors.len())].clone()).collect();
        let x = Tensor::stack(&batch);
        let (loss, mut grads) = model.loss_and_grads(&x);
        opt.step(&mut model.params, &mut grads);
        losses.push(loss);
        on_step(step, loss);
    }
    Ok((model, losses))
}
