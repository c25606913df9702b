//! Localizes finite-difference mismatches in the offline objective by
//! parameter and by component. Development aid.

use extract_core::rng::{next_standard_normal, rng_from_seed};
use extract_learn::skills::{elbo_loss_vars, SkillModel, SkillModelConfig, TrainItem};
use extract_nn::gradcheck::finite_difference_grad;
use extract_nn::Tape;
use ndarray::Array2;

fn main() {
    let mut cfg = SkillModelConfig::new(3, 2, 3);
    cfg.z_dim = 2;
    cfg.rnn_hidden = 6;
    cfg.mlp_hidden = 5;
    cfg.max_len = 4;
    cfg.seed = 9;
    let mut rng = rng_from_seed(31);
    let mut model = SkillModel::new(cfg.clone());
    let items: Vec<TrainItem> = [1usize, 2, 4]
        .iter()
        .enumerate()
        .map(|(i, &n)| TrainItem {
            actions: Array2::from_shape_fn((n, cfg.act_dim), |_| {
                next_standard_normal(&mut rng) * 0.5
            }),
            d: i % cfg.k,
            state: (0..cfg.state_dim)
                .map(|_| next_standard_normal(&mut rng))
                .collect(),
        })
        .collect();
    let eps = Array2::from_shape_fn((items.len(), cfg.z_dim), |_| next_standard_normal(&mut rng));

    for comp in ["total", "rec", "prog", "klq", "pd", "pz"] {
        model.store.zero_grads();
        {
            let mut tape = Tape::new();
            let (vars, _) = elbo_loss_vars(&mut tape, &model, &items, &eps).unwrap();
            let v = match comp {
                "total" => vars.total,
                "rec" => vars.action_rec,
                "prog" => vars.progress,
                "klq" => vars.encoder_kl,
                "pd" => vars.discrete_prior_nll,
                _ => vars.continuous_prior_nll,
            };
            tape.backward(v, &mut model.store);
        }
        let probe = model.clone();
        let ids: Vec<_> = model.store.ids().collect();
        let mut worst = (0.0f64, String::new());
        for id in ids {
            let fd = finite_difference_grad(&mut model.store, id, 1e-5, |store| {
                let mut shadow = probe.clone();
                shadow.store = store.clone();
                let mut tape = Tape::new();
                let (vars, _) = elbo_loss_vars(&mut tape, &shadow, &items, &eps).unwrap();
                let v = match comp {
                    "total" => vars.total,
                    "rec" => vars.action_rec,
                    "prog" => vars.progress,
                    "klq" => vars.encoder_kl,
                    "pd" => vars.discrete_prior_nll,
                    _ => vars.continuous_prior_nll,
                };
                tape.scalar(v)
            });
            let analytic = model.store.grad(id).clone();
            for (a, f) in analytic.iter().zip(fd.iter()) {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-8);
                if rel > worst.0 {
                    worst = (
                        rel,
                        format!("{} a={a:.3e} fd={f:.3e}", model.store.name(id)),
                    );
                }
            }
        }
        println!("{comp}: worst rel {:.3e} at {}", worst.0, worst.1);
    }
}
