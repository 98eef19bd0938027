//! Network blocks shared by the denoiser, autoencoder and detector.

use ldlab_nn::layers::{default_groups, Conv2d, GroupNorm, Linear};
use ldlab_nn::{Float, Graph, ParamStore, Var};
use rand::Rng;

/// `GN → SiLU → conv3 → (+ emb) → GN → SiLU → conv3`, plus a residual path
/// (a 1×1 conv when the channel count changes).
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    emb: Option<Linear>,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<T: Float, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        Self {
            gn1: GroupNorm::new(store, &format!("{name}.gn1"), cin, default_groups(cin)),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, rng),
            emb: emb_dim.map(|d| Linear::new(store, &format!("{name}.emb"), d, cout, rng)),
            gn2: GroupNorm::new(store, &format!("{name}.gn2"), cout, default_groups(cout)),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, 1, rng)),
        }
    }

    /// `emb` is the already-activated embedding `[n, emb_dim]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var, emb: Option<Var>) -> Var {
        let h = self.gn1.forward(g, x);
        let h = g.silu(h);
        let mut h = self.conv1.forward(g, h);
        if let (Some(proj), Some(e)) = (&self.emb, emb) {
            let e = proj.forward(g, e);
            h = g.add_channel(h, e);
        }
        let h = self.gn2.forward(g, h);
        let h = g.silu(h);
        let h = self.conv2.forward(g, h);
        let res = match &self.skip {
            Some(s) => s.forward(g, x),
            None => x,
        };
        g.add(h, res)
    }
}

/// Conv followed by SiLU.
pub(crate) fn conv_silu<T: Float>(g: &mut Graph<'_, T>, conv: &Conv2d, x: Var) -> Var {
    let h = conv.forward(g, x);
    g.silu(h)
}
