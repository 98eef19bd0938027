//! Central finite differences against the analytic backward pass for every op.

use ldlab_nn::layers::{Conv2d, GroupNorm, Linear};
use ldlab_nn::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Net {
    c1: Conv2d,
    down: Conv2d,
    gn: GroupNorm,
    lin: Linear,
    emb: ParamId,
    c2: Conv2d,
    point: Conv2d,
}

fn build(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> Net {
    Net {
        c1: Conv2d::new(store, "c1", 2, 4, 3, 1, rng),
        down: Conv2d::new(store, "down", 4, 4, 3, 2, rng),
        gn: GroupNorm::new(store, "gn", 4, 2),
        lin: Linear::new(store, "lin", 3, 4, rng),
        emb: store.normal("emb", &[3, 3], 1.0, rng),
        c2: Conv2d::new(store, "c2", 8, 3, 3, 1, rng),
        point: Conv2d::new(store, "point", 3, 2, 1, 1, rng),
    }
}

fn loss(net: &Net, store: &ParamStore<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> (f64, ldlab_nn::Gradients<f64>) {
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let h = net.c1.forward(&mut g, xv);
    let h = g.silu(h);
    let d = net.down.forward(&mut g, h);
    let d = net.gn.forward(&mut g, d);
    let e = g.param(net.emb);
    let e = g.embedding(e, &[2, 0]);
    let e = net.lin.forward(&mut g, e);
    let d = g.add_channel(d, e);
    let d = g.relu(d);
    let u = g.upsample2(d);
    let cat = g.concat(u, h);
    let o = net.c2.forward(&mut g, cat);
    let skip: Var = g.silu(o);
    let o = g.add(o, skip);
    let o = net.point.forward(&mut g, o);
    let t = g.input(target.clone());
    let l = g.mse(o, t);
    let value = g.value(l).data()[0];
    (value, g.backward(l))
}

#[test]
fn every_op_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let net = build(&mut store, &mut rng);
    let x = Tensor::from_vec(&[2, 2, 6, 6], (0..144).map(|_| rng.random_range(-1.0..1.0)).collect());
    let target = Tensor::from_vec(&[2, 2, 6, 6], (0..144).map(|_| rng.random_range(-1.0..1.0)).collect());
    let (_, grads) = loss(&net, &store, &x, &target);
    let h = 1e-5;
    let mut checked = 0;
    for id in store.ids() {
        let n = store.get(id).numel();
        for idx in [0, n / 2, n - 1] {
            let analytic = grads.get(id).map(|t| t.data()[idx]).unwrap_or(0.0);
            let orig = store.get(id).data()[idx];
            store.get_mut(id).data_mut()[idx] = orig + h;
            let (lp, _) = loss(&net, &store, &x, &target);
            store.get_mut(id).data_mut()[idx] = orig - h;
            let (lm, _) = loss(&net, &store, &x, &target);
            store.get_mut(id).data_mut()[idx] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(err < 1e-5, "{}[{idx}]: analytic {analytic} numeric {numeric}", store.name(id));
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * store.len());
}
