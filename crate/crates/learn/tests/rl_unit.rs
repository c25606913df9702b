//! Skill-execution semantics, replay-buffer behavior, prior initialization,
//! and the freeze contract of the online learner.

use ndarray::Array2;
use rand::Rng;

use extract_core::env::{StationWorld, StationWorldConfig, TaskSpec, OBS_DIM};
use extract_core::rng::rng_from_seed;
use extract_learn::rl::{
    execute_skill, rl_train, ReplayBuffer, RlConfig, SelectMode, SkillRlLearner, SkillTransition,
};
use extract_learn::skills::{SkillModel, SkillModelConfig};

fn small_model(progress_bias: Option<f64>) -> SkillModel {
    let mut cfg = SkillModelConfig::new(OBS_DIM, 2, 3);
    cfg.z_dim = 2;
    cfg.rnn_hidden = 6;
    cfg.mlp_hidden = 6;
    cfg.max_len = 10;
    let mut model = SkillModel::new(cfg);
    if let Some(bias) = progress_bias {
        // Pin the decoder's progress output via the final head bias.
        let head = model.vae.dec_head.layers.last().unwrap();
        let act_dim = model.cfg.act_dim;
        model.store.value_mut(head.w).fill(0.0);
        let b = model.store.value_mut(head.b);
        b.fill(0.0);
        b[[0, act_dim]] = bias;
    }
    model
}

#[test]
fn progress_threshold_stops_at_first_step() {
    let model = small_model(Some(5.0));
    let mut env = StationWorld::new(StationWorldConfig::default());
    let obs = env.reset(&TaskSpec::default_target(), 0);
    let state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let (tr, steps) = execute_skill(&mut env, &model, &state, 0, &[0.0, 0.0], None).unwrap();
    assert_eq!(tr.executed_len, 1);
    assert_eq!(steps, 1);
    assert!(!tr.done);
}

#[test]
fn no_progress_runs_to_max_len() {
    let model = small_model(Some(-5.0));
    let mut env = StationWorld::new(StationWorldConfig::default());
    let obs = env.reset(&TaskSpec::default_target(), 0);
    let state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let (tr, _) = execute_skill(&mut env, &model, &state, 0, &[0.0, 0.0], None).unwrap();
    assert_eq!(tr.executed_len, model.cfg.max_len);
}

#[test]
fn episode_end_cuts_skill_short() {
    let model = small_model(Some(-5.0));
    let mut cfg = StationWorldConfig::default();
    cfg.episode_cap = 3;
    let mut env = StationWorld::new(cfg);
    let obs = env.reset(&TaskSpec::default_target(), 0);
    let state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let (tr, _) = execute_skill(&mut env, &model, &state, 0, &[0.0, 0.0], None).unwrap();
    assert_eq!(tr.executed_len, 3);
    assert!(tr.done);
}

#[test]
fn fixed_length_mode_ignores_progress() {
    let model = small_model(Some(5.0));
    let mut env = StationWorld::new(StationWorldConfig::default());
    let obs = env.reset(&TaskSpec::default_target(), 0);
    let state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let (tr, _) = execute_skill(&mut env, &model, &state, 0, &[0.0, 0.0], Some(7)).unwrap();
    assert_eq!(tr.executed_len, 7);
}

#[test]
fn reward_sum_matches_independent_accounting() {
    // Wrap the same action sequence through a second env and compare sums.
    let model = small_model(None);
    let task = TaskSpec::default_target();
    let mut env = StationWorld::new(StationWorldConfig::default());
    let obs = env.reset(&task, 3);
    let state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let z = vec![0.1; model.cfg.z_dim];
    let (actions, _) = model.decode(&z, 1, model.cfg.max_len).unwrap();
    let (tr, _) = execute_skill(&mut env, &model, &state, 1, &z, None).unwrap();

    let mut check_env = StationWorld::new(StationWorldConfig::default());
    check_env.reset(&task, 3);
    let mut total = 0.0;
    for t in 0..tr.executed_len {
        let (_, r, done) = check_env.step([actions[[t, 0]], actions[[t, 1]]]).unwrap();
        total += r;
        if done {
            break;
        }
    }
    assert_eq!(tr.reward, total);
}

#[test]
fn buffer_is_fifo_at_capacity() {
    let mut buffer = ReplayBuffer::new(3);
    for i in 0..5 {
        buffer.push(SkillTransition {
            state: vec![i as f64],
            d: 0,
            z: vec![],
            reward: i as f64,
            next_state: vec![],
            done: false,
            executed_len: 1,
        });
    }
    assert_eq!(buffer.len(), 3);
    let rewards: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
}

#[test]
fn buffer_sampling_is_uniform_chi_square() {
    let n_items = 20usize;
    let mut buffer = ReplayBuffer::new(n_items);
    for i in 0..n_items {
        buffer.push(SkillTransition {
            state: vec![i as f64],
            d: 0,
            z: vec![],
            reward: 0.0,
            next_state: vec![],
            done: false,
            executed_len: 1,
        });
    }
    let mut rng = rng_from_seed(11);
    let draws = 100_000usize;
    let mut counts = vec![0usize; n_items];
    for idx in buffer.sample_indices(draws, &mut rng) {
        counts[idx] += 1;
    }
    let expected = draws as f64 / n_items as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // χ²(df = 19) critical value at α = 0.01.
    assert!(chi2 < 36.191, "chi-square {chi2} rejects uniformity");
}

#[test]
fn select_skill_is_deterministic_and_greedy_tie_breaks_low() {
    let model = small_model(None);
    let learner = SkillRlLearner::new(&model, RlConfig::default());
    let state = vec![0.0; OBS_DIM];
    let mut r1 = rng_from_seed(2);
    let mut r2 = rng_from_seed(2);
    let a = learner.select_skill(&state, &mut r1, SelectMode::Sample);
    let b = learner.select_skill(&state, &mut r2, SelectMode::Sample);
    assert_eq!(a, b);

    // Concentrated policy: all mass on skill 2.
    let mut learner = SkillRlLearner::new(&model, RlConfig::default());
    let last = learner.pd.layers.last().unwrap();
    learner.store.value_mut(last.w).fill(0.0);
    let bias = learner.store.value_mut(last.b);
    bias.fill(-30.0);
    bias[[0, 2]] = 30.0;
    let mut rng = rng_from_seed(5);
    for _ in 0..50 {
        let (d, _) = learner.select_skill(&state, &mut rng, SelectMode::Sample);
        assert_eq!(d, 2);
    }

    // Exact ties resolve to the smallest index in greedy mode.
    let bias = learner.store.value_mut(last.b);
    bias.fill(0.0);
    let (d, _) = learner.select_skill(&state, &mut rng, SelectMode::Greedy);
    assert_eq!(d, 0);
}

#[test]
fn zero_training_steps_leaves_policy_equal_to_priors() {
    let model = small_model(None);
    let learner = SkillRlLearner::new(&model, RlConfig::default());
    let mut rng = rng_from_seed(9);
    for _ in 0..10 {
        let state: Vec<f64> = (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = Array2::from_shape_vec((1, OBS_DIM), state.clone()).unwrap();
        let (prior_logits, prior_gauss) = model.prior_log_probs(&state).unwrap();
        let policy_logits: Vec<f64> = learner.policy_logits(&s).row(0).to_vec();
        assert_eq!(policy_logits, prior_logits);
        for d in 0..learner.k {
            let (mu, sigma) = learner.policy_gaussian(&s, d);
            assert_eq!(mu.row(0).to_vec(), prior_gauss[d].0);
            assert_eq!(sigma.row(0).to_vec(), prior_gauss[d].1);
        }
    }
}

#[test]
fn rl_train_freezes_priors_and_decoder() {
    let model = small_model(None);
    let snapshot = model.store.clone();
    let cfg = RlConfig {
        env_step_budget: 600,
        warmup_transitions: 8,
        batch_size: 8,
        eval_every_env_steps: 500,
        eval_episodes: 1,
        seed: 3,
        ..Default::default()
    };
    let (_, records) = rl_train(
        &StationWorldConfig::default(),
        &TaskSpec::default_target(),
        &model,
        cfg,
        "extract",
    )
    .unwrap();
    assert!(model.store.values_equal(&snapshot), "frozen models changed");
    assert!(records.iter().any(|r| r.eval_return.is_some()));
    assert!(records.iter().any(|r| r.critic_loss.is_some()));
}

#[test]
fn skill_execution_never_exceeds_max_len() {
    let model = small_model(None);
    let mut env = StationWorld::new(StationWorldConfig::default());
    let mut rng = rng_from_seed(31);
    let obs = env.reset(&TaskSpec::default_target(), 1);
    let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    for _ in 0..40 {
        if env.is_done() {
            break;
        }
        let z: Vec<f64> = (0..model.cfg.z_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = rng.gen_range(0..model.cfg.k);
        let (tr, steps) = execute_skill(&mut env, &model, &state, d, &z, None).unwrap();
        assert!(tr.executed_len >= 1 && tr.executed_len <= model.cfg.max_len);
        assert_eq!(steps, tr.executed_len);
        state = tr.next_state;
    }
}
