use contractive_core::data::{synthesize, Dataset, MotionKind, SynthSpec};
use contractive_core::loss::Metric;
use contractive_core::policy::{Policy, PolicyConfig};
use contractive_core::rollout::{Method, SolverConfig};
use contractive_core::train::{train, Checkpoint, GammaSpec, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(kind: MotionKind, m: usize) -> Dataset<f64> {
    synthesize(&SynthSpec {
        kind,
        demos: m,
        horizon: 40,
        dim: 2,
        noise_std: 0.0,
        seed: 3,
    })
    .unwrap()
}

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        latent_dim: 4,
        implicit_dim: 3,
        coupling_layers: 2,
        coupling_width: 8,
        horizon: 12,
        epochs: 10,
        log_every: 2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let ds = data(MotionKind::Sine, 2);
    let a = train(small(5), &ds).unwrap();
    let b = train(small(5), &ds).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let c = train(small(6), &ds).unwrap();
    assert_ne!(a.to_text(), c.to_text());
}

#[test]
fn checkpoint_file_reloads_exactly() {
    let ds = data(MotionKind::SCurve, 2);
    let ckpt = train(small(1), &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let solver = ckpt.config.solver();
    let y0 = [0.4, -0.7];
    let a = ckpt.policy.rollout(&y0, &solver).unwrap();
    let b = back.policy.rollout(&y0, &solver).unwrap();
    assert!(a.states.max_abs_diff(&b.states) <= 1e-12);
    assert_eq!(back.norm, ckpt.norm);
    assert_eq!(back.summary, ckpt.summary);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let ds = data(MotionKind::Sine, 2);
    let full = train(small(2), &ds).unwrap();
    let mut half = Trainer::new(
        TrainConfig {
            epochs: 4,
            ..small(2)
        },
        &ds,
    )
    .unwrap();
    half.run(|_, _| Ok(())).unwrap();
    let mut ckpt = Checkpoint::from_text(&half.checkpoint().to_text(), "mem").unwrap();
    ckpt.config.epochs = 10;
    let mut rest = Trainer::resume(ckpt, &ds).unwrap();
    rest.run(|_, _| Ok(())).unwrap();
    let mut resumed = rest.checkpoint();
    resumed.config.epochs = full.config.epochs;
    assert_eq!(
        resumed
            .policy
            .params
            .iter()
            .map(|p| p.value.clone())
            .collect::<Vec<_>>(),
        full.policy
            .params
            .iter()
            .map(|p| p.value.clone())
            .collect::<Vec<_>>()
    );
    assert_eq!(resumed.summary.final_loss, full.summary.final_loss);
}

#[test]
fn linear_demo_loss_decreases() {
    let ds = data(MotionKind::Line, 1);
    let mut ratios: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = TrainConfig {
                coupling_layers: 0,
                metric: Metric::Mse,
                epochs: 50,
                lr: 1e-2,
                ..small(seed)
            };
            let mut t = Trainer::new(cfg, &ds).unwrap();
            let first = t.step().unwrap().loss;
            let mut last = first;
            for _ in 1..50 {
                last = t.step().unwrap().loss;
            }
            last / first
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[2] < 0.9, "{ratios:?}");
}

#[test]
fn lmi_holds_at_every_logged_epoch() {
    let ds = data(MotionKind::SCurve, 3);
    let cfg = TrainConfig {
        lr: 5e-2,
        epochs: 20,
        log_every: 1,
        ..small(4)
    };
    let mut t = Trainer::new(cfg, &ds).unwrap();
    let mut logged = 0;
    t.run(|rec, tr| {
        logged += 1;
        assert!(rec.eig_min >= tr.cfg.eps - 1e-9, "{}", rec.to_json());
        Ok(())
    })
    .unwrap();
    assert_eq!(logged, 20);
}

#[test]
fn learnable_rate_respects_floor() {
    let ds = data(MotionKind::Sine, 2);
    let cfg = TrainConfig {
        gamma: GammaSpec::Learnable {
            init: 1.0,
            gamma_min: 0.5,
            mu: 0.1,
            c: 0.0,
            gamma0: 0.0,
        },
        lr: 5e-2,
        epochs: 30,
        log_every: 1,
        ..small(7)
    };
    let mut t = Trainer::new(cfg, &ds).unwrap();
    t.run(|rec, _| {
        assert!(rec.gamma >= 0.5);
        Ok(())
    })
    .unwrap();
}

#[test]
fn rollouts_start_at_the_initial_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let ny = rng.random_range(1..=4);
        let mut cfg = PolicyConfig::new(ny, ny + rng.random_range(0..=4), rng.random_range(1..=5));
        cfg.coupling_layers = rng.random_range(0..=4);
        cfg.coupling_width = 8;
        cfg.init_gain = 1.0;
        cfg.proj_noise = 0.5;
        let policy = Policy::<f64>::init(cfg, seed).unwrap();
        let y0: Vec<f64> = (0..ny).map(|_| rng.random_range(-2.0..2.0)).collect();
        let solver = SolverConfig::new(Method::Euler, 8, 2);
        let tr = policy.rollout(&y0, &solver).unwrap();
        for (a, b) in tr.initial().iter().zip(&y0) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
        assert_eq!(tr, policy.rollout(&y0, &solver).unwrap());
    }
}
