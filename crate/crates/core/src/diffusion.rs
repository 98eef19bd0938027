//! Closed-form diffusion math: noise schedules, the forward process and its
//! marginal, the ancestral reverse step, deterministic DDIM steps and the
//! classifier-free guidance combination.
//!
//! Timesteps are 1-indexed (`1..=T`) and `ᾱ_0 = 1`. All coefficients are
//! computed in `f64`; the element type of the arrays is generic so tests can
//! run everything in `f64`.

use ldlab_nn::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("bad schedule range: T={t}, beta_start={start}, beta_end={end}")]
    BadRange { t: usize, start: f64, end: f64 },
    #[error("shape mismatch: {0} vs {1} elements")]
    ShapeMismatch(usize, usize),
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("bad DDIM timestep pair t={t}, t_prev={t_prev} (need 0 <= t_prev < t <= {max})")]
    BadTimestepPair { t: usize, t_prev: usize, max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    /// Squared-cosine `ᾱ` curve; betas are clipped into `[beta_start, beta_end]`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub fn build_schedule(t: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<NoiseSchedule, DiffusionError> {
    let ok = t >= 1 && beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0;
    if !ok {
        return Err(DiffusionError::BadRange { t, start: beta_start, end: beta_end });
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear if t == 1 => vec![beta_start],
        ScheduleKind::Linear => {
            (0..t).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64).collect()
        }
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |i: usize| ((i as f64 / t as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (1..=t).map(|i| (1.0 - f(i) / f(i - 1)).clamp(beta_start, beta_end)).collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { kind, betas, alphas, alpha_bars })
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.len() {
            return Err(DiffusionError::TimestepOutOfRange { t, max: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Uniform draw from `1..=T`.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(1..=self.len())
    }
}

fn same_len(a: usize, b: usize) -> Result<(), DiffusionError> {
    if a != b {
        return Err(DiffusionError::ShapeMismatch(a, b));
    }
    Ok(())
}

fn affine2<T: Float>(ca: f64, a: &[T], cb: f64, b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| T::of(ca * x.f64() + cb * y.f64())).collect()
}

/// One step of the forward chain: `z_t = √(1−β_t)·z_{t−1} + √β_t·noise`.
pub fn forward_step<T: Float>(z_prev: &[T], t: usize, noise: &[T], s: &NoiseSchedule) -> Result<Vec<T>, DiffusionError> {
    s.check_t(t)?;
    same_len(z_prev.len(), noise.len())?;
    Ok(affine2((1.0 - s.beta(t)).sqrt(), z_prev, s.beta(t).sqrt(), noise))
}

/// Closed-form marginal: `z_t = √ᾱ_t·z_0 + √(1−ᾱ_t)·eps`.
pub fn forward_sample<T: Float>(z0: &[T], t: usize, eps: &[T], s: &NoiseSchedule) -> Result<Vec<T>, DiffusionError> {
    s.check_t(t)?;
    same_len(z0.len(), eps.len())?;
    let ab = s.alpha_bar(t);
    Ok(affine2(ab.sqrt(), z0, (1.0 - ab).sqrt(), eps))
}

/// Mean over elements of `(eps_pred − eps)²`.
pub fn training_loss<T: Float>(eps_pred: &[T], eps: &[T]) -> Result<f64, DiffusionError> {
    same_len(eps_pred.len(), eps.len())?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = eps_pred.iter().zip(eps).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum();
    Ok(sum / eps.len() as f64)
}

/// Ancestral step `z_t → z_{t−1}` with `σ_t = √β_t` and `σ_1 = 0`.
pub fn ddpm_reverse_step<T: Float>(
    z_t: &[T],
    eps_pred: &[T],
    t: usize,
    s: &NoiseSchedule,
    noise: &[T],
) -> Result<Vec<T>, DiffusionError> {
    s.check_t(t)?;
    same_len(z_t.len(), eps_pred.len())?;
    same_len(z_t.len(), noise.len())?;
    let inv_sqrt_alpha = 1.0 / s.alpha(t).sqrt();
    let eps_coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
    let sigma = if t > 1 { s.beta(t).sqrt() } else { 0.0 };
    Ok(z_t
        .iter()
        .zip(eps_pred)
        .zip(noise)
        .map(|((z, e), n)| T::of(inv_sqrt_alpha * (z.f64() - eps_coef * e.f64()) + sigma * n.f64()))
        .collect())
}

/// Deterministic DDIM (`η = 0`) step from `t` to `t_prev`.
pub fn ddim_step<T: Float>(
    z_t: &[T],
    eps_pred: &[T],
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
) -> Result<Vec<T>, DiffusionError> {
    if !(t_prev < t && t <= s.len()) {
        return Err(DiffusionError::BadTimestepPair { t, t_prev, max: s.len() });
    }
    same_len(z_t.len(), eps_pred.len())?;
    let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
    if ab == ab_prev {
        return Ok(z_t.to_vec());
    }
    let (sa, sna) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sp, snp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(z_t
        .iter()
        .zip(eps_pred)
        .map(|(z, e)| {
            let (z, e) = (z.f64(), e.f64());
            let x0 = (z - sna * e) / sa;
            T::of(sp * x0 + snp * e)
        })
        .collect())
}

/// DDIM step whose clean-image estimate is clamped to `[-bound, bound]`
/// before re-deriving the noise; identical to [`ddim_step`] whenever the
/// estimate is already in range.
pub fn ddim_step_clipped<T: Float>(
    z_t: &[T],
    eps_pred: &[T],
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
    bound: f64,
) -> Result<Vec<T>, DiffusionError> {
    if !(t_prev < t && t <= s.len()) {
        return Err(DiffusionError::BadTimestepPair { t, t_prev, max: s.len() });
    }
    same_len(z_t.len(), eps_pred.len())?;
    let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
    if ab == ab_prev {
        return Ok(z_t.to_vec());
    }
    let (sa, sna) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sp, snp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(z_t
        .iter()
        .zip(eps_pred)
        .map(|(z, e)| {
            let (z, e) = (z.f64(), e.f64());
            let raw = (z - sna * e) / sa;
            let x0 = raw.clamp(-bound, bound);
            let e = if x0 == raw { e } else { (z - sa * x0) / sna };
            T::of(sp * x0 + snp * e)
        })
        .collect())
}

/// Guided prediction `eps_uncond + w·(eps_cond − eps_uncond)`, evaluated as
/// `(1−w)·eps_uncond + w·eps_cond` so that `w = 0` and `w = 1` are exact.
pub fn cfg_combine<T: Float>(eps_cond: &[T], eps_uncond: &[T], w: f64) -> Result<Vec<T>, DiffusionError> {
    same_len(eps_cond.len(), eps_uncond.len())?;
    Ok(eps_cond.iter().zip(eps_uncond).map(|(c, u)| T::of((1.0 - w) * u.f64() + w * c.f64())).collect())
}

/// Descending, evenly spaced DDIM timesteps from `T` down to at least 1.
/// Each consecutive pair (and the last step to 0) is one DDIM update.
pub fn ddim_timesteps(t_max: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, t_max.max(1));
    let mut ts: Vec<usize> = (1..=steps).rev().map(|i| ((i * t_max) as f64 / steps as f64).round() as usize).collect();
    ts.dedup();
    ts.retain(|&t| t >= 1);
    ts
}

/// Run a full DDIM chain from `z_T`, calling `predict(z_t, t)` for the noise.
pub fn ddim_sample<T: Float, F>(z_t: Vec<T>, s: &NoiseSchedule, steps: usize, predict: F) -> Result<Vec<T>, DiffusionError>
where
    F: FnMut(&[T], usize) -> Vec<T>,
{
    ddim_chain(z_t, s, steps, None, predict)
}

/// [`ddim_sample`] with every step taken by [`ddim_step_clipped`].
pub fn ddim_sample_clipped<T: Float, F>(z_t: Vec<T>, s: &NoiseSchedule, steps: usize, bound: f64, predict: F) -> Result<Vec<T>, DiffusionError>
where
    F: FnMut(&[T], usize) -> Vec<T>,
{
    ddim_chain(z_t, s, steps, Some(bound), predict)
}

fn ddim_chain<T: Float, F>(z_t: Vec<T>, s: &NoiseSchedule, steps: usize, bound: Option<f64>, mut predict: F) -> Result<Vec<T>, DiffusionError>
where
    F: FnMut(&[T], usize) -> Vec<T>,
{
    let ts = ddim_timesteps(s.len(), steps);
    let mut z = z_t;
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let eps = predict(&z, t);
        z = match bound {
            Some(b) => ddim_step_clipped(&z, &eps, t, t_prev, s, b)?,
            None => ddim_step(&z, &eps, t, t_prev, s)?,
        };
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 0.1, 0.1, ScheduleKind::Linear).unwrap();
        assert_eq!(s.betas, vec![0.1]);
        assert_eq!(s.alpha_bars, vec![0.9]);
    }

    #[test]
    fn four_step_linear_schedule() {
        let s = build_schedule(4, 0.1, 0.4, ScheduleKind::Linear).unwrap();
        for (b, want) in s.betas.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((b - want).abs() < 1e-15);
        }
        assert!((s.alpha_bar(4) - 0.9 * 0.8 * 0.7 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn bad_ranges_rejected() {
        for (t, a, b) in [(0, 0.1, 0.2), (4, 0.0, 0.2), (4, 0.3, 0.2), (4, 0.1, 1.0)] {
            assert!(matches!(build_schedule(t, a, b, ScheduleKind::Linear), Err(DiffusionError::BadRange { .. })));
        }
    }

    #[test]
    fn cosine_schedule_decreases() {
        let s = build_schedule(200, 1e-4, 0.999, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn plugged_in_values() {
        let s = build_schedule(1, 0.36, 0.36, ScheduleKind::Linear).unwrap();
        assert!((forward_step(&[0.0f64], 1, &[1.0], &s).unwrap()[0] - 0.6).abs() < 1e-15);
        let s = build_schedule(1, 0.36, 0.36, ScheduleKind::Linear).unwrap();
        // ᾱ_1 = 0.64
        assert!((forward_sample(&[1.0f64], 1, &[1.0], &s).unwrap()[0] - 1.4).abs() < 1e-15);
        assert_eq!(cfg_combine(&[2.0f64], &[1.0], 3.0).unwrap(), vec![4.0]);
    }

    #[test]
    fn errors() {
        let s = build_schedule(4, 0.1, 0.4, ScheduleKind::Linear).unwrap();
        assert_eq!(forward_step(&[0.0f64], 5, &[0.0], &s), Err(DiffusionError::TimestepOutOfRange { t: 5, max: 4 }));
        assert_eq!(forward_sample(&[0.0f64, 1.0], 1, &[0.0], &s), Err(DiffusionError::ShapeMismatch(2, 1)));
        assert!(matches!(ddim_step(&[0.0f64], &[0.0], 2, 2, &s), Err(DiffusionError::BadTimestepPair { .. })));
        assert!(training_loss(&[0.0f64], &[]).is_err());
    }

    #[test]
    fn timestep_grid() {
        assert_eq!(ddim_timesteps(200, 50).len(), 50);
        assert_eq!(ddim_timesteps(200, 50)[0], 200);
        assert_eq!(*ddim_timesteps(200, 50).last().unwrap(), 4);
        assert_eq!(ddim_timesteps(10, 50), (1..=10).rev().collect::<Vec<_>>());
    }
}
