//! Parameterized building blocks. Each layer registers its tensors in a
//! [`ParamStore`] at construction and applies itself on a [`Graph`].

use rand::Rng;

use crate::{Float, Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Kernel `k×k` with "same" padding for odd `k`.
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = store.uniform_fan_in(format!("{name}.weight"), &[cout, cin, k, k], fan_in, rng);
        let bias = store.uniform_fan_in(format!("{name}.bias"), &[cout], fan_in, rng);
        Self { weight, bias, stride, pad: k / 2 }
    }

    /// Weight and bias start at exactly zero.
    pub fn zeroed<T: Float>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[cout, cin, k, k]);
        let bias = store.zeros(format!("{name}.bias"), &[cout]);
        Self { weight, bias, stride: 1, pad: k / 2 }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.uniform_fan_in(format!("{name}.weight"), &[dout, din], din, rng);
        let bias = store.uniform_fan_in(format!("{name}.bias"), &[dout], din, rng);
        Self { weight, bias }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize) -> Self {
        assert_eq!(channels % groups, 0, "{name}: {channels} channels into {groups} groups");
        let gamma = store.full(format!("{name}.gamma"), &[channels], 1.0);
        let beta = store.zeros(format!("{name}.beta"), &[channels]);
        Self { gamma, beta, groups }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}

/// Largest group count ≤ 8 that divides `channels`.
pub fn default_groups(channels: usize) -> usize {
    (1..=8).rev().find(|g| channels % g == 0).unwrap_or(1)
}
