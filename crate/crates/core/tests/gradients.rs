use courtcast::autodiff::{gradient_check, GradCheckOptions, Tape, Var};
use courtcast::models::check::{check_model_gradients, model_check_options, random_windows};
use courtcast::models::{Dims, ModelConfig, ModelKind};
use courtcast::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIMS: Dims = Dims {
    history: 6,
    forecast: 3,
    objects: 3,
};

#[test]
fn every_trainable_miniature_matches_finite_differences() {
    let config = ModelConfig::miniature();
    for kind in ModelKind::ALL.into_iter().filter(|k| k.trainable()) {
        for seed in 100..103 {
            let report = check_model_gradients(kind, &config, DIMS, seed, &model_check_options(seed)).unwrap();
            assert!(report.passed(), "{kind} seed {seed}: {:?}", report.worst());
            assert!(report.coords_checked > 0);
        }
    }
}

#[test]
fn lmu_gradient_survives_ten_steps_and_euler() {
    let dims = Dims { history: 10, ..DIMS };
    for method in [courtcast::models::LmuMethod::Zoh, courtcast::models::LmuMethod::Euler] {
        let config = ModelConfig {
            lmu_method: method,
            ..ModelConfig::miniature()
        };
        let report = check_model_gradients(ModelKind::Lmu, &config, dims, 7, &model_check_options(7)).unwrap();
        assert!(report.passed(), "{method:?}: {:?}", report.worst());
    }
}

#[test]
fn transformer_with_mean_pooling_and_positions() {
    let config = ModelConfig {
        pooling: courtcast::models::Pooling::Mean,
        positional_encoding: true,
        ..ModelConfig::miniature()
    };
    let report = check_model_gradients(ModelKind::Transformer, &config, DIMS, 3, &model_check_options(3)).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn gnn_with_knn_edges_and_distance_attention() {
    let config = ModelConfig {
        edge_rule: courtcast::data::EdgeRule::Knn { k: 1 },
        gat_edge_distance: true,
        ..ModelConfig::miniature()
    };
    let dims = Dims { objects: 4, ..DIMS };
    let report = check_model_gradients(ModelKind::Gnn, &config, dims, 11, &model_check_options(11)).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn random_windows_have_requested_shape_and_a_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ws = random_windows(DIMS, 4, &mut rng).unwrap();
    assert_eq!(ws.len(), 4);
    for w in &ws {
        assert_eq!((w.history_steps(), w.forecast_steps(), w.objects(), w.features()), (6, 3, 3, 4));
        assert_eq!(*w.team_ids.last().unwrap(), -1);
    }
}

#[test]
fn kink_retry_only_rescues_kinks() {
    // |x| at 1e-6: the default bracket straddles the kink, a finer one does not
    let abs = |t: &mut Tape, v: &[Var]| {
        let r = t.relu(v[0]);
        let neg = t.scale(v[0], -1.0);
        let l = t.relu(neg);
        let y = t.add(r, l)?;
        Ok(t.sum(y))
    };
    let x = vec![Tensor::from_vec(&[1], vec![1e-6])];
    let plain = gradient_check(abs, &x, &GradCheckOptions::default()).unwrap();
    assert!(!plain.passed());
    let opts = GradCheckOptions {
        kink_retry: Some(1e-7),
        ..Default::default()
    };
    let retried = gradient_check(abs, &x, &opts).unwrap();
    assert!(retried.passed());
    assert_eq!(retried.kinks.len(), 1);
    // a genuinely wrong gradient stays wrong
    let wrong = |t: &mut Tape, v: &[Var]| {
        let x = t.value(v[0]).item();
        let c = t.constant(Tensor::from_vec(&[1], vec![x * x]));
        let y = t.add(c, v[0])?;
        Ok(t.sum(y))
    };
    let x = vec![Tensor::from_vec(&[1], vec![2.0])];
    assert!(!gradient_check(wrong, &x, &opts).unwrap().passed());
}
