//! Tape-based reverse-mode autodiff over f64 matrices, plus the layers and
//! optimizer used by the skill models. Single-threaded and allocation-heavy
//! by design: batches here are small and exact, reproducible gradients
//! matter more than throughput.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use layers::{GruCell, Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::max_relative_error;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut r = rng(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "net", &[3, 5, 4, 2], &mut r);
        let x = random(4, 3, &mut r);
        let target = random(4, 2, &mut r);

        let loss_fn = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = mlp.forward(&mut tape, store, xv);
            let tv = tape.constant(target.clone());
            let diff = tape.sub(y, tv);
            let sq = tape.square(diff);
            let loss = tape.mean_all(sq);
            tape.scalar(loss)
        };

        store.zero_grads();
        {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = mlp.forward(&mut tape, &store, xv);
            let tv = tape.constant(target.clone());
            let diff = tape.sub(y, tv);
            let sq = tape.square(diff);
            let loss = tape.mean_all(sq);
            tape.backward(loss, &mut store);
        }
        let group = mlp.param_ids();
        let err = max_relative_error(&mut store, &group, 1e-5, 1e-8, loss_fn);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut r = rng(1);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, &mut r);
        let head = Linear::new(&mut store, "head", 4, 2, &mut r);
        let steps: Vec<Array2<f64>> = (0..5).map(|_| random(2, 3, &mut r)).collect();
        let target = random(2, 2, &mut r);

        let loss_fn = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let mut h = cell.initial_state(&mut tape, 2);
            for x in &steps {
                let xv = tape.constant(x.clone());
                h = cell.step(&mut tape, store, xv, h);
            }
            let y = head.forward(&mut tape, store, h);
            let tv = tape.constant(target.clone());
            let d = tape.sub(y, tv);
            let sq = tape.square(d);
            let loss = tape.sum_all(sq);
            tape.scalar(loss)
        };

        store.zero_grads();
        {
            let mut tape = Tape::new();
            let mut h = cell.initial_state(&mut tape, 2);
            for x in &steps {
                let xv = tape.constant(x.clone());
                h = cell.step(&mut tape, &store, xv, h);
            }
            let y = head.forward(&mut tape, &store, h);
            let tv = tape.constant(target.clone());
            let d = tape.sub(y, tv);
            let sq = tape.square(d);
            let loss = tape.sum_all(sq);
            tape.backward(loss, &mut store);
        }
        let mut group = cell.param_ids();
        group.extend(head.param_ids());
        let err = max_relative_error(&mut store, &group, 1e-5, 1e-8, loss_fn);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn composite_ops_gradcheck() {
        // Exercise div, ln, exp, softplus, logsumexp, broadcast, min, slice,
        // concat in a single scalar function.
        let mut r = rng(2);
        let mut store = ParamStore::new();
        let a = store.add("a", random(3, 4, &mut r).mapv(|v| v + 2.5));
        let b = store.add("b", random(3, 4, &mut r).mapv(|v| v + 2.5));

        let build = |tape: &mut Tape, store: &ParamStore| -> Var {
            let av = tape.param(store, a);
            let bv = tape.param(store, b);
            let q = tape.div(av, bv);
            let lq = tape.ln(q);
            let sp = tape.softplus(lq);
            let e = tape.exp(lq);
            let m = tape.min_elem(sp, e);
            let lse = tape.logsumexp_cols(m);
            let wide = tape.broadcast_cols(lse, 4);
            let merged = tape.concat_cols(&[wide, m]);
            let part = tape.slice_cols(merged, 2, 6);
            let sums = tape.sum_cols(part);
            tape.mean_all(sums)
        };

        store.zero_grads();
        {
            let mut tape = Tape::new();
            let loss = build(&mut tape, &store);
            tape.backward(loss, &mut store);
        }
        let err = max_relative_error(&mut store, &[a, b], 1e-6, 1e-8, |store| {
            let mut tape = Tape::new();
            let loss = build(&mut tape, store);
            tape.scalar(loss)
        });
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array2::from_elem((1, 1), 2.0));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let stopped = tape.detach(wv);
        let prod = tape.mul(wv, stopped); // d/dw (w * sg(w)) = sg(w) = 2
        let loss = tape.sum_all(prod);
        tape.backward(loss, &mut store);
        assert_eq!(store.grad(w)[[0, 0]], 2.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let p = tape.softmax(x);
        for row in tape.value(p).rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array2::from_elem((1, 3), 5.0));
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                clip_norm: None,
                ..Default::default()
            },
            vec![w],
            &store,
        );
        for _ in 0..500 {
            store.zero_grads();
            let mut tape = Tape::new();
            let wv = tape.param(&store, w);
            let sq = tape.square(wv);
            let loss = tape.sum_all(sq);
            tape.backward(loss, &mut store);
            adam.step(&mut store);
        }
        assert!(store.value(w).iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn min_elem_ties_route_to_first() {
        let mut store = ParamStore::new();
        let a = store.add("a", Array2::from_elem((1, 1), 1.0));
        let b = store.add("b", Array2::from_elem((1, 1), 1.0));
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let bv = tape.param(&store, b);
        let m = tape.min_elem(av, bv);
        let loss = tape.sum_all(m);
        tape.backward(loss, &mut store);
        assert_eq!(store.grad(a)[[0, 0]], 1.0);
        assert_eq!(store.grad(b)[[0, 0]], 0.0);
    }
}
