//! A small reverse-mode autodiff tape over `Array2<f64>`. Every value is a
//! batch-rows matrix; sequences are unrolled as one node per timestep. The
//! op set is exactly what the skill models and RL losses need — nothing
//! speculative.

use ndarray::{Array2, Axis};

use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
#[allow(dead_code)] // payloads kept for graph debugging even when backward ignores them
enum Op {
    Const,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MinElem(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, f64),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    BroadcastCols(Var, usize),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    LogSumExpCols(Var),
    Detach(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Forward graph plus values. Build, read values, then call `backward` once
/// per loss.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The single element of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.shape(), &[1, 1], "scalar() on non-scalar node");
        val[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ----- leaves -----

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Registers a parameter leaf with the parameter's current value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    // ----- elementwise / broadcast -----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(value, Op::Div(a, b))
    }

    /// Elementwise minimum; gradient routes to the smaller side (first on
    /// ties).
    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut value = av.clone();
        value.zip_mut_with(bv, |x, &y| {
            if y < *x {
                *x = y;
            }
        });
        self.push(value, Op::MinElem(a, b))
    }

    /// `[B, D] + [1, D]` row broadcast (bias add).
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = &self.nodes[x.0].value + &self.nodes[row.0].value;
        self.push(value, Op::AddRow(x, row))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v + c);
        self.push(value, Op::AddScalar(x, c))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        self.push(value, Op::MulScalar(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.mul_scalar(x, -1.0)
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let value = self.nodes[x.0].value.dot(&self.nodes[w.0].value);
        self.push(value, Op::MatMul(x, w))
    }

    // ----- nonlinearities -----

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::ln);
        self.push(value, Op::Ln(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(softplus);
        self.push(value, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v * v);
        self.push(value, Op::Square(x))
    }

    // ----- shape -----

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|v| self.nodes[v.0].value.ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for v in parts {
            let part = &self.nodes[v.0].value;
            value
                .slice_mut(ndarray::s![.., at..at + part.ncols()])
                .assign(part);
            at += part.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Var {
        let value = self.nodes[x.0].value.slice(ndarray::s![.., from..to]).to_owned();
        self.push(value, Op::SliceCols(x, from, to))
    }

    /// `[B, 1]` replicated to `[B, d]`.
    pub fn broadcast_cols(&mut self, x: Var, d: usize) -> Var {
        let col = &self.nodes[x.0].value;
        assert_eq!(col.ncols(), 1, "broadcast_cols expects a column");
        let mut value = Array2::zeros((col.nrows(), d));
        for j in 0..d {
            value.column_mut(j).assign(&col.column(0));
        }
        self.push(value, Op::BroadcastCols(x, d))
    }

    // ----- reductions -----

    pub fn sum_cols(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0]
            .value
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        self.push(value, Op::SumCols(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[x.0].value.sum());
        self.push(value, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::MeanAll(x))
    }

    /// Row-wise `ln Σ_j exp(x_ij)`, numerically stable.
    pub fn logsumexp_cols(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let mut value = Array2::zeros((v.nrows(), 1));
        for (i, row) in v.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            value[[i, 0]] = m + s.ln();
        }
        self.push(value, Op::LogSumExpCols(x))
    }

    /// Value passes through; gradient does not.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(value, Op::Detach(x))
    }

    // ----- composites -----

    /// Row-wise log-softmax: `x − logsumexp(x)`.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let d = self.value(x).ncols();
        let lse = self.logsumexp_cols(x);
        let lse_b = self.broadcast_cols(lse, d);
        self.sub(x, lse_b)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let logp = self.log_softmax(x);
        self.exp(logp)
    }

    // ----- backward -----

    /// Reverse pass from a `[1, 1]` loss node; accumulates parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        let grads = self.gradients(loss);
        for (node, grad) in self.nodes.iter().zip(grads.into_iter()) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.accumulate_grad(*id, &g);
            }
        }
    }

    /// Per-node gradients of `loss` (shape `[1, 1]`) for inspection.
    pub fn gradients(&self, loss: Var) -> Vec<Option<Array2<f64>>> {
        assert_eq!(
            self.nodes[loss.0].value.shape(),
            &[1, 1],
            "backward from non-scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const | Op::Param(_) | Op::Detach(_) => {
                    // Leaves keep their gradient for later inspection;
                    // Detach keeps it too but never propagates to its input
                    // (stop-gradient).
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[b.0].value;
                    let ga = &g / bv;
                    let gb = -&(&g * &self.nodes[a.0].value) / &(bv * bv);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MinElem(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut ga = g.clone();
                    let mut gb = g.clone();
                    ndarray::Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(av)
                        .and(bv)
                        .for_each(|ga, gb, &a, &b| {
                            if a <= b {
                                *gb = 0.0;
                            } else {
                                *ga = 0.0;
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *x, g.clone());
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                }
                Op::AddScalar(x, _) => accumulate(&mut grads, *x, g),
                Op::MulScalar(x, c) => accumulate(&mut grads, *x, g.mapv(|v| v * c)),
                Op::MatMul(x, w) => {
                    let gx = g.dot(&self.nodes[w.0].value.t());
                    let gw = self.nodes[x.0].value.t().dot(&g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    accumulate(&mut grads, *x, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[i].value;
                    accumulate(&mut grads, *x, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Exp(x) => {
                    accumulate(&mut grads, *x, &g * &self.nodes[i].value);
                }
                Op::Ln(x) => {
                    accumulate(&mut grads, *x, &g / &self.nodes[x.0].value);
                }
                Op::Softplus(x) => {
                    let d = self.nodes[x.0].value.mapv(sigmoid);
                    accumulate(&mut grads, *x, &g * &d);
                }
                Op::Square(x) => {
                    accumulate(&mut grads, *x, &g * &self.nodes[x.0].value.mapv(|v| 2.0 * v));
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        accumulate(&mut grads, *p, gp);
                        at += w;
                    }
                }
                Op::SliceCols(x, from, to) => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    gx.slice_mut(ndarray::s![.., *from..*to]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::BroadcastCols(x, _) => {
                    let gx = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumCols(x) => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    for j in 0..xv.ncols() {
                        gx.column_mut(j).assign(&g.column(0));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut grads, *x, Array2::from_elem(xv.raw_dim(), g[[0, 0]]));
                }
                Op::MeanAll(x) => {
                    let xv = &self.nodes[x.0].value;
                    let scale = g[[0, 0]] / xv.len() as f64;
                    accumulate(&mut grads, *x, Array2::from_elem(xv.raw_dim(), scale));
                }
                Op::LogSumExpCols(x) => {
                    let xv = &self.nodes[x.0].value;
                    let yv = &self.nodes[i].value;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    for r in 0..xv.nrows() {
                        for c in 0..xv.ncols() {
                            gx[[r, c]] = g[[r, 0]] * (xv[[r, c]] - yv[[r, 0]]).exp();
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
