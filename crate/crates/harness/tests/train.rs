use courtcast::data::{derive_velocities, make_windows, FrameSeries, NormStats, Window};
use courtcast::models::features::channel_names;
use courtcast::models::{build, Dims, ModelConfig, ModelKind, Sample};
use courtcast::optim::AdamWConfig;
use courtcast::{Tensor, DT};
use courtcast_harness::config::TrainConfig;
use courtcast_harness::train::{evaluate_loss, train_model};
use courtcast_harness::HarnessError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: Dims = Dims {
    history: 4,
    forecast: 3,
    objects: 2,
};

/// Straight lines at a per-series random velocity: future velocities are
/// exactly the last history velocity, a linear map of the input.
fn linear_windows(series: usize, seed: u64) -> Vec<Window> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 12;
    let mut out = Vec::new();
    for k in 0..series {
        let v: Vec<[f64; 2]> = (0..2).map(|_| [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]).collect();
        let p0: Vec<[f64; 2]> = (0..2).map(|_| [rng.gen_range(0.0..28.0), rng.gen_range(0.0..15.0)]).collect();
        let data = (0..t)
            .flat_map(|i| (0..2).flat_map({ let (v, p0) = (&v, &p0); move |o| [p0[o][0] + v[o][0] * DT * i as f64, p0[o][1] + v[o][1] * DT * i as f64] }))
            .collect();
        let s = FrameSeries {
            game_id: format!("g{k}"),
            focal_team: "A".into(),
            times: (0..t).map(|i| i as f64 * DT).collect(),
            object_ids: vec![1, 2],
            team_ids: vec![1, 2],
            features: vec!["pos_x".into(), "pos_y".into()],
            values: Tensor::from_vec(&[t, 2, 2], data),
        };
        out.extend(make_windows(&derive_velocities(&s).unwrap(), DIMS.history, DIMS.forecast, 2).unwrap().windows);
    }
    out
}

fn samples(ws: &[Window]) -> Vec<Sample<'_>> {
    ws.iter().enumerate().map(|(i, w)| Sample { window: w, target: i % 2 }).collect()
}

fn config() -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        linear_hidden: 32,
        ..ModelConfig::paper()
    }
}

fn train_config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        optimizer: AdamWConfig {
            lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        patience: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn linear_model_learns_an_exactly_linear_map() {
    let ws = linear_windows(60, 1);
    let norm = NormStats::fit(&ws, &channel_names()).unwrap();
    let train = samples(&ws);
    let t = train_model(ModelKind::Linear, &config(), DIMS, &train, &[], &norm, &train_config(150, 3e-3), 4).unwrap();
    assert!(t.diverged.is_none());
    let losses: Vec<f64> = t.curve.iter().map(|s| s.train_loss).collect();
    assert!(losses[..5].windows(2).all(|w| w[1] < w[0]), "{:?}", &losses[..5]);
    let mse = evaluate_loss(t.model.as_ref(), &train, &norm, 64).unwrap();
    assert!(mse < 1e-3, "final mse {mse}");
}

#[test]
fn zero_epochs_return_the_initialization() {
    let ws = linear_windows(4, 2);
    let norm = NormStats::fit(&ws, &channel_names()).unwrap();
    for kind in [ModelKind::Linear, ModelKind::Lstm, ModelKind::ConstantVelocity] {
        let t = train_model(kind, &config(), DIMS, &samples(&ws), &[], &norm, &train_config(0, 1e-3), 9).unwrap();
        let init = build(kind, &config(), DIMS, 9).unwrap();
        assert_eq!(t.model.params().tensors(), init.params().tensors());
        assert!(t.curve.is_empty());
    }
}

#[test]
fn fixed_seed_gives_identical_curves_and_parameters() {
    let ws = linear_windows(20, 3);
    let norm = NormStats::fit(&ws, &channel_names()).unwrap();
    let all = samples(&ws);
    let (train, val) = all.split_at(30);
    let run = || {
        let cfg = ModelConfig {
            dropout: 0.2,
            ..ModelConfig::miniature()
        };
        train_model(ModelKind::Lmu, &cfg, DIMS, train, val, &norm, &train_config(4, 1e-2), 5).unwrap()
    };
    let (a, b) = (run(), run());
    let losses = |t: &courtcast_harness::train::Trained| {
        t.curve.iter().map(|s| (s.train_loss, s.validation_loss)).collect::<Vec<_>>()
    };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.model.params().tensors(), b.model.params().tensors());
}

#[test]
fn best_validation_epoch_is_restored() {
    let ws = linear_windows(20, 6);
    let norm = NormStats::fit(&ws, &channel_names()).unwrap();
    let all = samples(&ws);
    let (train, val) = all.split_at(30);
    let t = train_model(ModelKind::Linear, &config(), DIMS, train, val, &norm, &train_config(8, 5e-2), 1).unwrap();
    let best = t.best_epoch.unwrap();
    let want = t.curve[best - 1].validation_loss.unwrap();
    assert!(t.curve.iter().all(|s| s.validation_loss.unwrap() >= want));
    let got = evaluate_loss(t.model.as_ref(), val, &norm, 256).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn exploding_loss_stops_with_a_divergence_error() {
    let ws = linear_windows(8, 4);
    let norm = NormStats::fit(&ws, &channel_names()).unwrap();
    let t = train_model(ModelKind::Linear, &config(), DIMS, &samples(&ws), &[], &norm, &train_config(50, 1e200), 0).unwrap();
    match t.diverged {
        Some(HarnessError::Diverged { model, loss, .. }) => {
            assert_eq!(model, "linear");
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(t.model.params().tensors().iter().all(|p| p.data().iter().all(|v| v.is_finite())));
}
