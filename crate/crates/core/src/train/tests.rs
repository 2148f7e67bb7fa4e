use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Scaler;
use crate::features::{FeatureMask, WindowSample};
use crate::model::{init_params, Batch, ModelDims, ModelParameters, ParamGroup, ParamName};
use crate::numcore::{ParamId, Tensor};

const NO_TIME: FeatureMask = FeatureMask {
    time_index: false,
    stats: true,
    similarity: false,
};

/// Stats-only model: scalar history rows and a 3-wide Q.
fn dims() -> ModelDims {
    ModelDims {
        seq_len: 6,
        in_dim: 1,
        d: 3,
        n_h: 6,
        q_dim: 3,
        out_len: 4,
    }
}

fn setup() -> ModelSetup {
    ModelSetup {
        dims: dims(),
        features: NO_TIME,
        scaler: Scaler::new(0.0, 1.0).unwrap(),
        clusters: None,
    }
}

fn random_samples(n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims();
    (0..n)
        .map(|_| WindowSample {
            x: Tensor::matrix(d.seq_len, 1, (0..d.seq_len).map(|_| rng.random::<f64>()).collect()).unwrap(),
            q: (0..d.q_dim).map(|_| rng.random::<f64>()).collect(),
            y: (0..d.out_len).map(|_| rng.random::<f64>()).collect(),
            target_date: chrono::NaiveDate::MIN,
        })
        .collect()
}

/// Targets are a fixed linear map of Q; the history is zero.
fn linear_toy(n: usize) -> Vec<WindowSample> {
    let a = [[0.5, -0.2, 0.1], [0.3, 0.3, 0.0], [-0.1, 0.4, 0.2], [0.2, 0.0, -0.3]];
    let mut s = random_samples(n, 9);
    for w in &mut s {
        w.x = Tensor::zeros(w.x.shape());
        w.y = a
            .iter()
            .map(|r| r.iter().zip(&w.q).map(|(x, y)| x * y).sum::<f64>() + 0.5)
            .collect();
    }
    s
}

fn refs(s: &[WindowSample]) -> Vec<&WindowSample> {
    s.iter().collect()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs_offline: 3,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn batch_loss_exact_fit_is_zero() {
    let mut p = ModelParameters::zeros(dims()).unwrap();
    p.set(ParamName::Bo2, Tensor::vector(vec![0.1, 0.2, 0.3, 0.4])).unwrap();
    let mut s = random_samples(2, 1);
    for w in &mut s {
        w.y = vec![0.1, 0.2, 0.3, 0.4];
    }
    assert_eq!(batch_loss(&refs(&s), &p).unwrap(), 0.0);
}

#[test]
fn batch_loss_is_a_one_norm() {
    let d = ModelDims { out_len: 24, ..dims() };
    let p = ModelParameters::zeros(d).unwrap();
    let mut s = random_samples(1, 2);
    s[0].y = vec![0.1; 24];
    assert!((batch_loss(&refs(&s), &p).unwrap() - 2.4).abs() < 1e-12);
}

#[test]
fn batch_loss_matches_per_sample_mean() {
    let p = init_params(dims(), 3).unwrap();
    let s = random_samples(3, 3);
    let oracle: f64 = s
        .iter()
        .map(|w| {
            let y = crate::model::forward(&w.x, &w.q, &p).unwrap();
            y.iter().zip(&w.y).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum::<f64>()
        / 3.0;
    assert!((batch_loss(&refs(&s), &p).unwrap() - oracle).abs() < 1e-12);
    assert!((dataset_loss(&s, &p).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn zero_lambda_is_the_plain_loss() {
    let p = init_params(dims(), 4).unwrap();
    let s = random_samples(5, 4);
    let r = refs(&s);
    assert_eq!(
        perturbed_loss(&r, &p, 0.0).unwrap().to_bits(),
        batch_loss(&r, &p).unwrap().to_bits()
    );
    let batch = Batch::new(&r, &dims()).unwrap();
    let (l, g) = loss_and_grads(&batch, &p, |_| true).unwrap();
    let step = perturbed_loss_and_grads(&batch, &p, 0.0, |_| true).unwrap();
    assert_eq!(step.gamma.to_bits(), l.to_bits());
    for (id, t) in g.iter() {
        assert_eq!(step.grads.get(id).unwrap(), t);
    }
}

#[test]
fn stationary_embedding_is_not_perturbed() {
    // zero downstream weights: the embedding has no influence on Γ1
    let mut p = init_params(dims(), 6).unwrap();
    for n in [ParamName::Wo1, ParamName::Wo2] {
        let shape = p.get(n).shape();
        p.set(n, Tensor::zeros(shape)).unwrap();
    }
    let s = random_samples(4, 6);
    let r = refs(&s);
    assert_eq!(perturbed_loss(&r, &p, 1.0).unwrap(), batch_loss(&r, &p).unwrap());
}

#[test]
fn perturbation_is_lambda_times_gradient() {
    let p = init_params(dims(), 7).unwrap();
    let s = random_samples(4, 7);
    let batch = Batch::new(&refs(&s), &dims()).unwrap();
    let (_, grads) = loss_and_grads(&batch, &p, |_| true).unwrap();
    let (_, delta) = embedding_perturbation(&batch, &p, 0.5).unwrap();
    assert_eq!(delta.len(), 2);
    for (name, d) in delta {
        let i = p.names().iter().position(|&n| n == name).unwrap();
        let g = grads.get(ParamId(i)).unwrap();
        for (a, b) in d.data().iter().zip(g.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let s = random_samples(20, 8);
    let cfg = TrainConfig {
        max_epochs_offline: 0,
        ..quick_config()
    };
    let out = train_offline(&s, setup(), &cfg).unwrap();
    assert_eq!(out.checkpoint.params, init_params(dims(), cfg.seed).unwrap());
    assert_eq!(out.epochs_run, 0);
    assert_eq!(out.checkpoint.history.len(), 1);
}

#[test]
fn linear_toy_loss_decreases() {
    let s = linear_toy(120);
    let cfg = TrainConfig {
        lambda_perturb: 0.0,
        max_epochs_offline: 5,
        patience_offline: 10,
        ..quick_config()
    };
    let out = train_offline(&s, setup(), &cfg).unwrap();
    let losses: Vec<f64> = out.checkpoint.history[1..].iter().map(|h| h.train_loss).collect();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn plateau_triggers_patience_stop() {
    let s = random_samples(40, 10);
    let cfg = TrainConfig {
        lr_offline: 1e-9,
        max_epochs_offline: 100,
        ..quick_config()
    };
    let out = train_offline(&s, setup(), &cfg).unwrap();
    assert!(out.epochs_run <= 3 + cfg.patience_offline + 1, "{}", out.epochs_run);
    assert!(out.checkpoint.history.iter().all(|h| h.train_loss.is_finite()));
}

#[test]
fn validation_samples_never_reach_a_gradient() {
    let s = random_samples(30, 11);
    let out = train_offline(&s, setup(), &quick_config()).unwrap();
    assert_eq!(out.validation_indices.len(), 3);
    for &i in &out.validation_indices {
        assert_eq!(out.gradient_uses[i], 0);
    }
    for &i in &out.train_indices {
        assert_eq!(out.gradient_uses[i], out.epochs_run as u32);
    }
}

#[test]
fn too_few_samples_for_a_validation_split() {
    let s = random_samples(4, 12);
    assert!(train_offline(&s, setup(), &quick_config()).is_err());
}

#[test]
fn training_is_reproducible() {
    let s = random_samples(30, 13);
    let a = train_offline(&s, setup(), &quick_config()).unwrap().checkpoint;
    let b = train_offline(&s, setup(), &quick_config()).unwrap().checkpoint;
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn diverging_run_names_epoch_and_batch() {
    let mut s = random_samples(30, 14);
    s[3].y[0] = f64::INFINITY;
    let err = train_offline(&s, setup(), &quick_config()).unwrap_err();
    assert!(matches!(err, crate::Error::Divergence { epoch: 1, .. }), "{err}");
}

fn trained() -> (Checkpoint, Vec<WindowSample>) {
    let s = random_samples(30, 15);
    let ckpt = train_offline(&s, setup(), &quick_config()).unwrap().checkpoint;
    (ckpt, random_samples(20, 16))
}

#[test]
fn policy_none_is_identity() {
    let (ckpt, recent) = trained();
    let out = correct_online(&ckpt, &recent, &quick_config(), &CorrectionPolicy::none()).unwrap();
    assert_eq!(out.checkpoint.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
}

#[test]
fn fine_tune_touches_only_the_output_block() {
    let (ckpt, recent) = trained();
    for online_perturbed in [false, true] {
        let cfg = TrainConfig {
            online_perturbed,
            ..quick_config()
        };
        let out = correct_online(&ckpt, &recent, &cfg, &CorrectionPolicy::default()).unwrap();
        for g in [ParamGroup::Embedding, ParamGroup::Rest] {
            assert_eq!(out.checkpoint.params.group_bytes(g), ckpt.params.group_bytes(g));
        }
        assert_ne!(
            out.checkpoint.params.group_bytes(ParamGroup::Output),
            ckpt.params.group_bytes(ParamGroup::Output)
        );
        assert_eq!(out.checkpoint.setup, ckpt.setup);
        assert!(out.recent_loss_after <= out.recent_loss_before);
    }
}

#[test]
fn retrain_all_updates_everything() {
    let (ckpt, recent) = trained();
    let policy = CorrectionPolicy {
        mode: CorrectionMode::RetrainAll,
        ..CorrectionPolicy::default()
    };
    let out = correct_online(&ckpt, &recent, &quick_config(), &policy).unwrap();
    if out.checkpoint.params != ckpt.params {
        assert_ne!(
            out.checkpoint.params.group_bytes(ParamGroup::Rest),
            ckpt.params.group_bytes(ParamGroup::Rest)
        );
    }
}

#[test]
fn correction_needs_windows() {
    let (ckpt, _) = trained();
    assert!(correct_online(&ckpt, &[], &quick_config(), &CorrectionPolicy::default()).is_err());
}

#[test]
fn clipped_training_stays_finite() {
    let s = random_samples(20, 17);
    let cfg = TrainConfig {
        clip_norm: Some(1e-6),
        max_epochs_offline: 1,
        ..quick_config()
    };
    let out = train_offline(&s, setup(), &cfg).unwrap();
    assert!(out.checkpoint.history.iter().all(|h| h.validation_loss.is_finite()));
}

#[test]
fn setup_must_match_dims() {
    let bad = ModelSetup {
        dims: ModelDims { q_dim: 5, ..dims() },
        ..setup()
    };
    assert!(bad.validate().is_err());
}
