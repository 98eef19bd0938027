//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every op applied during a forward pass together with
//! its output value. [`Graph::backward`] walks the tape in reverse and returns
//! gradients for every parameter that contributed to the loss.

use std::collections::BTreeMap;

use crate::kernels::{self, group_stats};
use crate::{Float, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddChannel { x: Var, e: Var },
    Concat(Var, Var),
    Silu(Var),
    Relu(Var),
    Upsample2(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Mse(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Float> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Gradients keyed by parameter, produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    map: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().flat_map(|t| t.data().iter()).map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    /// Drop gradients whose parameter fails `keep`, leaving it untouched by optimizers.
    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.map.retain(|id, _| keep(*id));
    }

    pub fn scale(&mut self, s: f64) {
        let s = T::of(s);
        for t in self.map.values_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

impl<'p, T: Float> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.store.get(id).clone();
        self.push(t, Op::Param(id), &[])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Conv2d { x, w, b, stride, pad }, &inputs)
    }

    /// `x [n, din] · wᵀ + b` with `w [dout, din]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, din) = (xv.shape()[0], xv.shape()[1]);
        let dout = wv.shape()[0];
        assert_eq!(wv.shape()[1], din, "linear input width");
        let mut out = Tensor::zeros(&[n, dout]);
        let beta = if let Some(b) = b {
            let bv = self.value(b).data().to_vec();
            for row in out.data_mut().chunks_mut(dout) {
                row.copy_from_slice(&bv);
            }
            T::one()
        } else {
            T::zero()
        };
        crate::tensor::gemm(false, true, n, dout, din, T::one(), xv.data(), wv.data(), beta, out.data_mut());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Broadcast-add `e [n, c]` over the spatial axes of `x [n, c, h, w]`.
    pub fn add_channel(&mut self, x: Var, e: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(e).shape(), &[n, c]);
        let ev = self.value(e).data().to_vec();
        let mut out = self.value(x).clone();
        for (p, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            for v in plane {
                *v += ev[p];
            }
        }
        self.push(out, Op::AddChannel { x, e }, &[x, e])
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial shapes");
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * ca * h * w..(i + 1) * ca * h * w]);
            data.extend_from_slice(&self.value(b).data()[i * cb * h * w..(i + 1) * cb * h * w]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, h, w], data);
        self.push(out, Op::Concat(a, b), &[a, b])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v / (T::one() + (-v).exp()));
        self.push(out, Op::Silu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = kernels::upsample2_forward(self.value(x));
        self.push(out, Op::Upsample2(x), &[x])
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let (mean, rstd) = group_stats(xv, groups, 1e-5);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let cpg = c / groups;
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let od = out.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let gi = i * groups + ch / cpg;
                let base = (i * c + ch) * h * w;
                for p in base..base + h * w {
                    od[p] = (xv.data()[p] - mean[gi]) * rstd[gi] * gv[ch] + bv[ch];
                }
            }
        }
        self.push(out, Op::GroupNorm { x, gamma, beta, groups, mean, rstd }, &[x, gamma, beta])
    }

    /// Gather rows of `table [v, d]` into `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let d = tv.shape()[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_vec(&[ids.len(), d], data);
        self.push(out, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Mean over all elements of `(a - b)²`, as a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mse operands");
        let n = av.numel() as f64;
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum();
        self.push(Tensor::scalar(T::of(s / n)), Op::Mse(a, b), &[a, b])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, g: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match grads[v.0].as_mut() {
                    Some(t) => t.add_assign(&g),
                    None => grads[v.0] = Some(g),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match out.map.get_mut(id) {
                    Some(t) => t.add_assign(&dy),
                    None => {
                        out.map.insert(*id, dy);
                    }
                },
                Op::Conv2d { x, w, b, stride, pad } => {
                    let need_dx = self.nodes[x.0].needs_grad;
                    let (dx, dw, db) =
                        kernels::conv2d_backward(self.value(*x), self.value(*w), &dy, *stride, *pad, need_dx);
                    if let Some(dx) = dx {
                        acc(*x, dx, &mut grads);
                    }
                    acc(*w, dw, &mut grads);
                    if let Some(b) = b {
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, din) = (xv.shape()[0], xv.shape()[1]);
                    let dout = wv.shape()[0];
                    let mut dw = Tensor::zeros(wv.shape());
                    crate::tensor::gemm(true, false, dout, din, n, T::one(), dy.data(), xv.data(), T::zero(), dw.data_mut());
                    if self.nodes[x.0].needs_grad {
                        let mut dx = Tensor::zeros(xv.shape());
                        crate::tensor::gemm(false, false, n, din, dout, T::one(), dy.data(), wv.data(), T::zero(), dx.data_mut());
                        acc(*x, dx, &mut grads);
                    }
                    acc(*w, dw, &mut grads);
                    if let Some(b) = b {
                        let mut db = Tensor::zeros(&[dout]);
                        for row in dy.data().chunks(dout) {
                            for (d, &g) in db.data_mut().iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, dy.clone(), &mut grads);
                    acc(*b, dy, &mut grads);
                }
                Op::AddChannel { x, e } => {
                    let (n, c, h, w) = dy.dims4();
                    let mut de = Tensor::zeros(&[n, c]);
                    for (p, plane) in dy.data().chunks(h * w).enumerate() {
                        de.data_mut()[p] = plane.iter().copied().sum();
                    }
                    acc(*e, de, &mut grads);
                    acc(*x, dy, &mut grads);
                }
                Op::Concat(a, b) => {
                    let (n, ca, h, w) = self.value(*a).dims4();
                    let cb = self.value(*b).dims4().1;
                    let (pa, pb) = (ca * h * w, cb * h * w);
                    let mut da = Vec::with_capacity(n * pa);
                    let mut db = Vec::with_capacity(n * pb);
                    for i in 0..n {
                        let s = &dy.data()[i * (pa + pb)..(i + 1) * (pa + pb)];
                        da.extend_from_slice(&s[..pa]);
                        db.extend_from_slice(&s[pa..]);
                    }
                    acc(*a, Tensor::from_vec(&[n, ca, h, w], da), &mut grads);
                    acc(*b, Tensor::from_vec(&[n, cb, h, w], db), &mut grads);
                }
                Op::Silu(x) => {
                    let dx = self.value(*x).zip_map(&dy, |v, g| g * T::of(silu_grad(v.f64())));
                    acc(*x, dx, &mut grads);
                }
                Op::Relu(x) => {
                    let dx = self.value(*x).zip_map(&dy, |v, g| if v > T::zero() { g } else { T::zero() });
                    acc(*x, dx, &mut grads);
                }
                Op::Upsample2(x) => acc(*x, kernels::upsample2_backward(&dy), &mut grads),
                Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gamma).data();
                    let (n, c, h, w) = xv.dims4();
                    let cpg = c / groups;
                    let len = (cpg * h * w) as f64;
                    let mut dx = Tensor::zeros(xv.shape());
                    let mut dgamma = Tensor::zeros(&[c]);
                    let mut dbeta = Tensor::zeros(&[c]);
                    for i in 0..n {
                        for g in 0..*groups {
                            let gi = i * groups + g;
                            let (m, r) = (mean[gi], rstd[gi]);
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for ch in g * cpg..(g + 1) * cpg {
                                let base = (i * c + ch) * h * w;
                                for p in base..base + h * w {
                                    let xhat = (xv.data()[p] - m) * r;
                                    let d = dy.data()[p];
                                    dgamma.data_mut()[ch] += d * xhat;
                                    dbeta.data_mut()[ch] += d;
                                    let dxhat = (d * gv[ch]).f64();
                                    sum_dxhat += dxhat;
                                    sum_dxhat_xhat += dxhat * xhat.f64();
                                }
                            }
                            let (mdx, mdxx) = (sum_dxhat / len, sum_dxhat_xhat / len);
                            for ch in g * cpg..(g + 1) * cpg {
                                let base = (i * c + ch) * h * w;
                                for p in base..base + h * w {
                                    let xhat = ((xv.data()[p] - m) * r).f64();
                                    let dxhat = (dy.data()[p] * gv[ch]).f64();
                                    dx.data_mut()[p] = T::of(r.f64() * (dxhat - mdx - xhat * mdxx));
                                }
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                    acc(*gamma, dgamma, &mut grads);
                    acc(*beta, dbeta, &mut grads);
                }
                Op::Embedding { table, ids } => {
                    let tv = self.value(*table);
                    let d = tv.shape()[1];
                    let mut dt = Tensor::zeros(tv.shape());
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt.data_mut()[id * d + j] += dy.data()[row * d + j];
                        }
                    }
                    acc(*table, dt, &mut grads);
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let scale = dy.data()[0] * T::of(2.0 / av.numel() as f64);
                    let da = av.zip_map(bv, |x, y| (x - y) * scale);
                    let db = da.map(|v| -v);
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
            }
        }
        out
    }
}
