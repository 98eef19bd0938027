//! Conditional noise predictor `ε_θ(z_t, t, condition image, style)`.
//!
//! A small U-Net over latents with a control branch: a convolutional encoder
//! over the rasterized landmark image whose per-level features are added to
//! the backbone's encoder features through zero-initialized 1×1 projections.
//! At initialization the branch therefore contributes exactly nothing. The
//! style token (0 = null prompt) is looked up in an embedding table and
//! summed with the timestep embedding.

use ldlab_nn::layers::{default_groups, Conv2d, GroupNorm, Linear};
use ldlab_nn::{Float, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blocks::{conv_silu, ResBlock};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    /// Latent height and width.
    pub latent_size: usize,
    pub base_width: usize,
    /// Number of U-Net resolution levels.
    pub depth: usize,
    pub timestep_embedding_dim: usize,
    /// Styles plus the null token at index 0.
    pub style_vocab_size: usize,
    pub condition_channels: usize,
    /// Condition image height and width; `latent_size` times a power of two.
    pub condition_size: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 3,
            latent_size: 64,
            base_width: 32,
            depth: 3,
            timestep_embedding_dim: 64,
            style_vocab_size: 26,
            condition_channels: 3,
            condition_size: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::BadConfig(m));
        let fields = [
            self.latent_channels,
            self.latent_size,
            self.base_width,
            self.depth,
            self.timestep_embedding_dim,
            self.style_vocab_size,
            self.condition_channels,
            self.condition_size,
        ];
        if fields.contains(&0) {
            return bad("denoiser sizes must all be positive".into());
        }
        if self.timestep_embedding_dim % 2 != 0 {
            return bad("timestep_embedding_dim must be even".into());
        }
        if self.latent_size % (1 << (self.depth - 1)) != 0 {
            return bad(format!("latent_size {} not divisible by 2^(depth-1)", self.latent_size));
        }
        let ratio = self.condition_size / self.latent_size;
        if self.condition_size % self.latent_size != 0 || !ratio.is_power_of_two() {
            return bad(format!(
                "condition_size {} must be latent_size {} times a power of two",
                self.condition_size, self.latent_size
            ));
        }
        Ok(())
    }

    /// Channel width at U-Net level `l`.
    pub fn width(&self, l: usize) -> usize {
        self.base_width * if l == 0 { 1 } else { 2 }
    }
}

#[derive(Clone, Debug)]
struct Net {
    time1: Linear,
    time2: Linear,
    style: ldlab_nn::ParamId,
    conv_in: Conv2d,
    ctrl_stem: Vec<Conv2d>,
    ctrl_down: Vec<Conv2d>,
    ctrl_zero: Vec<Conv2d>,
    enc: Vec<ResBlock>,
    down: Vec<Conv2d>,
    mid: ResBlock,
    dec: Vec<ResBlock>,
    up: Vec<Conv2d>,
    out_norm: GroupNorm,
    conv_out: Conv2d,
}

/// Denoiser parameters and their layout.
#[derive(Clone, Debug)]
pub struct Denoiser<T = f32> {
    pub config: DenoiserConfig,
    pub params: ParamStore<T>,
    net: Net,
}

/// Standard deviation of the non-null style embedding rows at initialization.
const STYLE_INIT_STD: f64 = 0.3;

impl<T: Float> Denoiser<T> {
    pub fn init(config: &DenoiserConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let e = c.timestep_embedding_dim;
        let time1 = Linear::new(&mut s, "time.fc1", e, e, &mut rng);
        let time2 = Linear::new(&mut s, "time.fc2", e, e, &mut rng);
        let mut table = Tensor::zeros(&[c.style_vocab_size, e]);
        for v in &mut table.data_mut()[e..] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = T::of(z * STYLE_INIT_STD);
        }
        let style = s.add("style.embedding", table);

        let w0 = c.width(0);
        let conv_in = Conv2d::new(&mut s, "conv_in", c.latent_channels, w0, 3, 1, &mut rng);
        let mut ctrl_stem = vec![Conv2d::new(&mut s, "ctrl.stem0", c.condition_channels, w0, 3, 1, &mut rng)];
        let mut size = c.condition_size;
        while size > c.latent_size {
            let name = format!("ctrl.stem{}", ctrl_stem.len());
            ctrl_stem.push(Conv2d::new(&mut s, &name, w0, w0, 3, 2, &mut rng));
            size /= 2;
        }
        let name = format!("ctrl.stem{}", ctrl_stem.len());
        ctrl_stem.push(Conv2d::new(&mut s, &name, w0, w0, 3, 1, &mut rng));
        let mut ctrl_down = Vec::new();
        let mut ctrl_zero = vec![Conv2d::zeroed(&mut s, "ctrl.zero0", w0, w0, 1)];
        for l in 1..c.depth {
            ctrl_down.push(Conv2d::new(&mut s, &format!("ctrl.down{l}"), c.width(l - 1), c.width(l), 3, 2, &mut rng));
            ctrl_zero.push(Conv2d::zeroed(&mut s, &format!("ctrl.zero{l}"), c.width(l), c.width(l), 1));
        }

        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..c.depth {
            enc.push(ResBlock::new(&mut s, &format!("enc{l}"), c.width(l), c.width(l), Some(e), &mut rng));
            if l + 1 < c.depth {
                down.push(Conv2d::new(&mut s, &format!("down{l}"), c.width(l), c.width(l + 1), 3, 2, &mut rng));
            }
        }
        let last = c.width(c.depth - 1);
        let mid = ResBlock::new(&mut s, "mid", last, last, Some(e), &mut rng);
        let mut dec = Vec::new();
        let mut up = Vec::new();
        for l in (0..c.depth).rev() {
            dec.push(ResBlock::new(&mut s, &format!("dec{l}"), 2 * c.width(l), c.width(l), Some(e), &mut rng));
            if l > 0 {
                up.push(Conv2d::new(&mut s, &format!("up{l}"), c.width(l), c.width(l - 1), 3, 1, &mut rng));
            }
        }
        let out_norm = GroupNorm::new(&mut s, "out.gn", w0, default_groups(w0));
        let conv_out = Conv2d::new(&mut s, "out.conv", w0, c.latent_channels, 3, 1, &mut rng);
        let net = Net {
            time1,
            time2,
            style,
            conv_in,
            ctrl_stem,
            ctrl_down,
            ctrl_zero,
            enc,
            down,
            mid,
            dec,
            up,
            out_norm,
            conv_out,
        };
        Ok(Self { config: config.clone(), params: s, net })
    }

    /// Build the prediction on `g`, which must be a graph over `self.params`.
    /// `z` is `[n, latent_channels, s, s]`, `cond` is `[n, condition_channels, cs, cs]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, z: Var, t: &[usize], cond: Var, styles: &[usize]) -> Var {
        let n = &self.net;
        let temb = g.input(timestep_embedding(t, self.config.timestep_embedding_dim));
        let h = n.time1.forward(g, temb);
        let h = g.silu(h);
        let temb = n.time2.forward(g, h);
        let table = g.param(n.style);
        let semb = g.embedding(table, styles);
        let emb = g.add(temb, semb);
        let emb = g.silu(emb);

        let mut c = cond;
        for conv in &n.ctrl_stem {
            c = conv_silu(g, conv, c);
        }
        let mut h = n.conv_in.forward(g, z);
        let inj = n.ctrl_zero[0].forward(g, c);
        h = g.add(h, inj);
        let mut skips = Vec::with_capacity(self.config.depth);
        for l in 0..self.config.depth {
            h = n.enc[l].forward(g, h, Some(emb));
            skips.push(h);
            if l + 1 < self.config.depth {
                h = n.down[l].forward(g, h);
                c = conv_silu(g, &n.ctrl_down[l], c);
                let inj = n.ctrl_zero[l + 1].forward(g, c);
                h = g.add(h, inj);
            }
        }
        h = n.mid.forward(g, h, Some(emb));
        for (i, l) in (0..self.config.depth).rev().enumerate() {
            h = g.concat(h, skips[l]);
            h = n.dec[i].forward(g, h, Some(emb));
            if l > 0 {
                h = g.upsample2(h);
                h = n.up[i].forward(g, h);
            }
        }
        let h = n.out_norm.forward(g, h);
        let h = g.silu(h);
        n.conv_out.forward(g, h)
    }

    /// Noise prediction with the same shape as `z_t`.
    pub fn predict_noise(&self, z_t: &Tensor<T>, t: &[usize], cond: &Tensor<T>, styles: &[usize]) -> Result<Tensor<T>, Error> {
        self.check_inputs(z_t, t, cond, styles)?;
        let mut g = Graph::new(&self.params);
        let z = g.input(z_t.clone());
        let c = g.input(cond.clone());
        let out = self.forward(&mut g, z, t, c, styles);
        Ok(g.value(out).clone())
    }

    pub fn check_inputs(&self, z_t: &Tensor<T>, t: &[usize], cond: &Tensor<T>, styles: &[usize]) -> Result<(), Error> {
        let c = &self.config;
        let zs = z_t.shape();
        let n = zs.first().copied().unwrap_or(0);
        let want_z = [n, c.latent_channels, c.latent_size, c.latent_size];
        let want_c = [n, c.condition_channels, c.condition_size, c.condition_size];
        if zs != want_z || cond.shape() != want_c || t.len() != n || styles.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "latents {zs:?}, condition {:?}, {} timesteps, {} styles for config {want_z:?}/{want_c:?}",
                cond.shape(),
                t.len(),
                styles.len()
            )));
        }
        if let Some(&s) = styles.iter().find(|&&s| s >= c.style_vocab_size) {
            return Err(Error::BadStyle(s));
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    /// Names of the zero-initialized control projections' tensors.
    pub fn control_projection_names(&self) -> Vec<String> {
        self.net
            .ctrl_zero
            .iter()
            .flat_map(|c| [c.weight, c.bias])
            .map(|id| self.params.name(id).to_string())
            .collect()
    }

    pub fn style_table(&self) -> &Tensor<T> {
        self.params.get(self.net.style)
    }

    pub fn style_table_mut(&mut self) -> &mut Tensor<T> {
        self.params.get_mut(self.net.style)
    }

    pub fn cast<U: Float>(&self) -> Denoiser<U> {
        Denoiser { config: self.config.clone(), params: self.params.cast(), net: self.net.clone() }
    }
}

/// Sinusoidal features `[sin(t·f_k), cos(t·f_k)]` with geometric frequencies.
pub fn timestep_embedding<T: Float>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let ti = ti as f64;
        let freqs = (0..half).map(|k| (-(10_000f64.ln()) * k as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| ti * f).collect();
        data.extend(args.iter().map(|a| T::of(a.sin())));
        data.extend(args.iter().map(|a| T::of(a.cos())));
    }
    Tensor::from_vec(&[t.len(), dim], data)
}
