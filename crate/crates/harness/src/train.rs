//! Mini-batch training with AdamW on the models' native outputs.

use std::time::Instant;

use courtcast::autodiff::Tape;
use courtcast::data::NormStats;
use courtcast::models::features::targets;
use courtcast::models::{build, Dims, Forecaster, ModelConfig, ModelKind, Sample};
use courtcast::optim::AdamW;
use courtcast::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{LrSchedule, TrainConfig};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub seconds: f64,
}

pub struct Trained {
    pub model: Box<dyn Forecaster>,
    pub curve: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    /// Set when a non-finite loss stopped training.
    pub diverged: Option<HarnessError>,
}

/// Mean loss of `model` over `samples` in evaluation mode.
pub fn evaluate_loss(model: &dyn Forecaster, samples: &[Sample], norm: &NormStats, batch: usize) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in samples.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false);
        let out = model.forward(&mut tape, &p, chunk, norm, None)?;
        let loss = tape.mse(out, targets(chunk, norm, model.output())?)?;
        total += tape.value(loss).item() * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

fn lr_at(schedule: LrSchedule, base: f64, step: u64) -> f64 {
    match schedule {
        LrSchedule::Constant => base,
        LrSchedule::Warmup { steps } => base * (step as f64 / steps.max(1) as f64).min(1.0),
    }
}

/// Trains a fresh model and returns the parameters with the best validation
/// loss (the last epoch's when there is no validation data).
pub fn train_model(
    kind: ModelKind,
    config: &ModelConfig,
    dims: Dims,
    train: &[Sample],
    validation: &[Sample],
    norm: &NormStats,
    tc: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    let mut model = build(kind, config, dims, seed)?;
    let mut curve = Vec::new();
    if !kind.trainable() || tc.epochs == 0 {
        return Ok(Trained {
            model,
            curve,
            best_epoch: None,
            diverged: None,
        });
    }
    if train.is_empty() {
        return Err(HarnessError::Invalid(format!("no training samples for {kind}")));
    }
    let mut opt = AdamW::new(tc.optimizer.clone(), model.params().tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7EA1_0000 ^ kind as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut stale = 0;
    for epoch in 1..=tc.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for (bi, idx) in order.chunks(tc.batch_size.max(1)).enumerate() {
            let batch: Vec<Sample> = idx.iter().map(|&i| train[i]).collect();
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape, true);
            let out = model.forward(&mut tape, &p, &batch, norm, Some(&mut rng))?;
            let loss = tape.mse(out, targets(&batch, norm, model.output())?)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                // keep the parameters that produced the last finite loss
                return Ok(Trained {
                    model,
                    curve,
                    best_epoch: None,
                    diverged: Some(HarnessError::Diverged {
                        model: kind.to_string(),
                        epoch,
                        batch: bi,
                        loss: value,
                    }),
                });
            }
            let grads = p.collect(&tape, &tape.backward(loss)?);
            opt.set_lr(lr_at(tc.schedule, tc.optimizer.lr, opt.steps() + 1));
            opt.step(model.params_mut().tensors_mut(), &grads)?;
            sum += value * batch.len() as f64;
            seen += batch.len();
        }
        let validation_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(model.as_ref(), validation, norm, tc.batch_size.max(256))?)
        };
        curve.push(EpochStats {
            epoch,
            train_loss: sum / seen as f64,
            validation_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let Some(v) = validation_loss {
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, epoch, model.params().tensors().to_vec()));
                stale = 0;
            } else {
                stale += 1;
                if tc.patience > 0 && stale >= tc.patience {
                    break;
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, tensors)) => {
            model.params_mut().tensors_mut().clone_from_slice(&tensors);
            Some(epoch)
        }
        None => curve.last().map(|s| s.epoch),
    };
    Ok(Trained {
        model,
        curve,
        best_epoch,
        diverged: None,
    })
}
