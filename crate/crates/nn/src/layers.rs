//! Layers: linear, tanh MLP, and a GRU cell, all built from tape ops so
//! gradients come from the same reverse pass as everything else.

use ndarray::Array2;
use rand::Rng;

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), xavier(in_dim, out_dim, rng));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Feedforward network with tanh hidden activations and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` = [in, hidden..., out].
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            if i != last {
                h = tape.tanh(h);
            }
        }
        h
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.param_ids()).collect()
    }
}

/// Fully-gated GRU cell:
/// r = σ(x·Wxr + h·Whr + br)
/// u = σ(x·Wxu + h·Whu + bu)
/// n = tanh(x·Wxn + (r ⊙ h)·Whn + bn)
/// h' = (1 − u) ⊙ n + u ⊙ h
#[derive(Debug, Clone)]
pub struct GruCell {
    wxr: ParamId,
    whr: ParamId,
    br: ParamId,
    wxu: ParamId,
    whu: ParamId,
    bu: ParamId,
    wxn: ParamId,
    whn: ParamId,
    bn: ParamId,
    pub in_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let wxr = store.add(format!("{name}.wxr"), xavier(in_dim, hidden_dim, rng));
        let whr = store.add(format!("{name}.whr"), xavier(hidden_dim, hidden_dim, rng));
        let br = store.add(format!("{name}.br"), Array2::zeros((1, hidden_dim)));
        let wxu = store.add(format!("{name}.wxu"), xavier(in_dim, hidden_dim, rng));
        let whu = store.add(format!("{name}.whu"), xavier(hidden_dim, hidden_dim, rng));
        let bu = store.add(format!("{name}.bu"), Array2::zeros((1, hidden_dim)));
        let wxn = store.add(format!("{name}.wxn"), xavier(in_dim, hidden_dim, rng));
        let whn = store.add(format!("{name}.whn"), xavier(hidden_dim, hidden_dim, rng));
        let bn = store.add(format!("{name}.bn"), Array2::zeros((1, hidden_dim)));
        Self {
            wxr,
            whr,
            br,
            wxu,
            whu,
            bu,
            wxn,
            whn,
            bn,
            in_dim,
            hidden_dim,
        }
    }

    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Var {
        tape.constant(Array2::zeros((batch, self.hidden_dim)))
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Var {
        let wxr = tape.param(store, self.wxr);
        let whr = tape.param(store, self.whr);
        let br = tape.param(store, self.br);
        let wxu = tape.param(store, self.wxu);
        let whu = tape.param(store, self.whu);
        let bu = tape.param(store, self.bu);
        let wxn = tape.param(store, self.wxn);
        let whn = tape.param(store, self.whn);
        let bn = tape.param(store, self.bn);

        let xr = tape.matmul(x, wxr);
        let hr = tape.matmul(h, whr);
        let pre_r = tape.add(xr, hr);
        let pre_r = tape.add_row(pre_r, br);
        let r = tape.sigmoid(pre_r);

        let xu = tape.matmul(x, wxu);
        let hu = tape.matmul(h, whu);
        let pre_u = tape.add(xu, hu);
        let pre_u = tape.add_row(pre_u, bu);
        let u = tape.sigmoid(pre_u);

        let xn = tape.matmul(x, wxn);
        let rh = tape.mul(r, h);
        let rhn = tape.matmul(rh, whn);
        let pre_n = tape.add(xn, rhn);
        let pre_n = tape.add_row(pre_n, bn);
        let n = tape.tanh(pre_n);

        let one = tape.constant(Array2::from_elem(tape.value(u).raw_dim(), 1.0));
        let one_minus_u = tape.sub(one, u);
        let a = tape.mul(one_minus_u, n);
        let b = tape.mul(u, h);
        tape.add(a, b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.wxr, self.whr, self.br, self.wxu, self.whu, self.bu, self.wxn, self.whn, self.bn,
        ]
    }
}
