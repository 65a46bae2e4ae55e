//! Finite-difference gradient checks of whole forecasters on random scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{channel_names, targets, Sample};
use super::{build, Dims, ModelConfig, ModelKind};
use crate::autodiff::{gradient_check, GradCheckOptions, GradCheckReport, Tape, Var};
use crate::data::normalize::NormStats;
use crate::data::series::{derive_velocities, FrameSeries};
use crate::data::window::{make_windows, Window};
use crate::error::Result;
use crate::params::Bound;
use crate::tensor::Tensor;
use crate::DT;

/// `count` random scenes of `objects − 1` players on two teams and a ball,
/// each cut to exactly one window.
pub fn random_windows(dims: Dims, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Window>> {
    let t = dims.history + dims.forecast;
    let n = dims.objects;
    let team_ids: Vec<i64> = (0..n)
        .map(|o| if o + 1 == n && n > 1 { -1 } else { 1 + (o % 2) as i64 })
        .collect();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut data = Vec::with_capacity(t * n * 2);
        let start: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(2.0..26.0), rng.gen_range(2.0..13.0)]).collect();
        let heading: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let mut pos = start;
        for _ in 0..t {
            for o in 0..n {
                pos[o][0] += (heading[o][0] + rng.gen_range(-1.0..1.0)) * DT;
                pos[o][1] += (heading[o][1] + rng.gen_range(-1.0..1.0)) * DT;
                data.extend_from_slice(&pos[o]);
            }
        }
        let series = FrameSeries {
            game_id: format!("check{k}"),
            focal_team: "1".into(),
            times: (0..t).map(|i| i as f64 * DT).collect(),
            object_ids: (1..=n as i64).collect(),
            team_ids: team_ids.clone(),
            features: vec!["pos_x".into(), "pos_y".into()],
            values: Tensor::from_vec(&[t, n, 2], data),
        };
        let set = make_windows(&derive_velocities(&series)?, dims.history, dims.forecast, 1)?;
        out.extend(set.windows);
    }
    Ok(out)
}

/// Builds `kind` with `seed`, jitters every parameter so zero-initialized
/// biases do not sit on a ReLU kink, draws a small batch and compares the
/// analytic gradient of the training loss with central differences.
pub fn check_model_gradients(
    kind: ModelKind,
    config: &ModelConfig,
    dims: Dims,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut model = build(kind, config, dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(kind as u64));
    for t in model.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    let windows = random_windows(dims, 3, &mut rng)?;
    let norm = NormStats::fit(&windows, &channel_names())?;
    let batch: Vec<Sample> = windows
        .iter()
        .map(|w| Sample {
            window: w,
            target: rng.gen_range(0..dims.objects.saturating_sub(1).max(1)),
        })
        .collect();
    let target = targets(&batch, &norm, model.output())?;
    let f = |tape: &mut Tape, vars: &[Var]| {
        let p = Bound::from_vars(vars.to_vec());
        let out = model.forward(tape, &p, &batch, &norm, None)?;
        tape.mse(out, target.clone())
    };
    gradient_check(f, model.params().tensors(), opts)
}

/// Options for whole-model checks: the default step and tolerance, with
/// gradients under `1e-6` compared in absolute terms (error below `1e-10`),
/// and a retry at a tenth of the step for brackets that cross a ReLU kink.
pub fn model_check_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        floor: 1e-6,
        seed,
        kink_retry: Some(1e-6),
        ..GradCheckOptions::default()
    }
}
