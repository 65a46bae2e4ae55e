//! Turning windows into normalized model inputs and native targets, and
//! native outputs back into positions.
//!
//! Objects are ordered target first, then the remaining objects in their
//! window order. Flattening is time-major, then object, then feature.

use crate::data::context::{frame_context, Landmarks};
use crate::data::normalize::NormStats;
use crate::data::series::{POS_X, POS_Y, VEL_X, VEL_Y};
use crate::data::window::Window;
use crate::error::{Error, Result};
use crate::eval::integrate_velocities;
use crate::tensor::Tensor;
use crate::DT;

use super::OutputKind;

/// One forecasting problem: a window and the object to forecast.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub window: &'a Window,
    pub target: usize,
}

/// Channel names expected by [`NormStats`] for model inputs.
pub fn channel_names() -> Vec<String> {
    ["pos_x", "pos_y", "v_x", "v_y"].iter().map(|s| s.to_string()).collect()
}

pub fn object_order(n: usize, target: usize) -> Vec<usize> {
    std::iter::once(target).chain((0..n).filter(|&o| o != target)).collect()
}

fn check_norm(norm: &NormStats) -> Result<()> {
    if norm.names != channel_names() {
        return Err(Error::Configuration(format!(
            "normalizer channels {:?} do not match pos_x, pos_y, v_x, v_y",
            norm.names
        )));
    }
    Ok(())
}

fn common_shape(batch: &[Sample]) -> Result<(usize, usize, usize)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Parameter("empty batch".into()))?
        .window;
    let dims = (first.history_steps(), first.forecast_steps(), first.objects());
    for s in batch {
        let w = s.window;
        if (w.history_steps(), w.forecast_steps(), w.objects()) != dims || w.features() < 4 {
            return Err(Error::dim(
                "batch",
                format!("window {} does not match {dims:?} with 4 features", w.key()),
            ));
        }
        if s.target >= w.objects() {
            return Err(Error::Parameter(format!("target {} of {} objects", s.target, w.objects())));
        }
    }
    Ok(dims)
}

/// `[B × H × N·C]` with the selected normalized channels per object.
pub fn history_channels(batch: &[Sample], norm: &NormStats, channels: &[usize]) -> Result<Tensor> {
    check_norm(norm)?;
    let (h, _, n) = common_shape(batch)?;
    let c = channels.len();
    let mut data = Vec::with_capacity(batch.len() * h * n * c);
    for s in batch {
        let order = object_order(n, s.target);
        for t in 0..h {
            for &o in &order {
                for &ch in channels {
                    data.push(norm.apply_value(ch, s.window.hist(t, o, ch)));
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[batch.len(), h, n * c], data))
}

pub fn velocity_history(batch: &[Sample], norm: &NormStats) -> Result<Tensor> {
    history_channels(batch, norm, &[VEL_X, VEL_Y])
}

pub fn position_history(batch: &[Sample], norm: &NormStats) -> Result<Tensor> {
    history_channels(batch, norm, &[POS_X, POS_Y])
}

pub fn state_history(batch: &[Sample], norm: &NormStats) -> Result<Tensor> {
    history_channels(batch, norm, &[POS_X, POS_Y, VEL_X, VEL_Y])
}

/// Per-object tracks `[B·N × H × 4]` (target first within each sample).
pub fn node_tracks(batch: &[Sample], norm: &NormStats) -> Result<Tensor> {
    let (h, _, n) = common_shape(batch)?;
    let flat = state_history(batch, norm)?;
    let src = flat.data();
    let mut data = Vec::with_capacity(src.len());
    for b in 0..batch.len() {
        for o in 0..n {
            for t in 0..h {
                let base = ((b * h + t) * n + o) * 4;
                data.extend_from_slice(&src[base..base + 4]);
            }
        }
    }
    Ok(Tensor::from_vec(&[batch.len() * n, h, 4], data))
}

/// The four CNN-LSTM fields, each `[B × 2 × N × H]`: normalized velocity,
/// then transformed offsets to the nearest object, hoop 1 and hoop 2.
pub fn context_fields(batch: &[Sample], norm: &NormStats, landmarks: &Landmarks) -> Result<[Tensor; 4]> {
    check_norm(norm)?;
    let (h, _, n) = common_shape(batch)?;
    let per = 2 * n * h;
    let mut fields: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; batch.len() * per]);
    let mut frame = vec![[0.0; 2]; n];
    for (b, s) in batch.iter().enumerate() {
        let order = object_order(n, s.target);
        let w = s.window;
        for t in 0..h {
            for (slot, &o) in frame.iter_mut().zip(&order) {
                *slot = [w.hist(t, o, POS_X), w.hist(t, o, POS_Y)];
            }
            for (row, &o) in order.iter().enumerate() {
                let (ctx, _) = frame_context(&frame, row, landmarks)?;
                let vel = [
                    norm.apply_value(VEL_X, w.hist(t, o, VEL_X)),
                    norm.apply_value(VEL_Y, w.hist(t, o, VEL_Y)),
                ];
                let values = [vel, ctx[0], ctx[1], ctx[2]];
                for (field, v) in fields.iter_mut().zip(values) {
                    for (axis, x) in v.into_iter().enumerate() {
                        field[b * per + (axis * n + row) * h + t] = x;
                    }
                }
            }
        }
    }
    Ok(fields.map(|d| Tensor::from_vec(&[batch.len(), 2, n, h], d)))
}

/// Scale used for position offsets: the velocity standard deviation times one second.
fn offset_scale(norm: &NormStats) -> [f64; 2] {
    [norm.std[VEL_X], norm.std[VEL_Y]]
}

/// Native training target `[B × P × 2]` for the given output kind.
pub fn targets(batch: &[Sample], norm: &NormStats, output: OutputKind) -> Result<Tensor> {
    check_norm(norm)?;
    let (_, p, _) = common_shape(batch)?;
    let scale = offset_scale(norm);
    let mut data = Vec::with_capacity(batch.len() * p * 2);
    for s in batch {
        let w = s.window;
        let last = w.last_position(s.target);
        for t in 0..p {
            match output {
                OutputKind::Velocities => {
                    data.push(norm.apply_value(VEL_X, w.fut(t, s.target, VEL_X)));
                    data.push(norm.apply_value(VEL_Y, w.fut(t, s.target, VEL_Y)));
                }
                OutputKind::Offsets => {
                    data.push((w.fut(t, s.target, POS_X) - last[0]) / scale[0]);
                    data.push((w.fut(t, s.target, POS_Y) - last[1]) / scale[1]);
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[batch.len(), p, 2], data))
}

/// Positions in meters from a native output `[B × P × 2]`.
pub fn decode(native: &Tensor, batch: &[Sample], norm: &NormStats, output: OutputKind) -> Result<Vec<Vec<[f64; 2]>>> {
    check_norm(norm)?;
    let shape = native.shape();
    if shape.len() != 3 || shape[0] != batch.len() || shape[2] != 2 {
        return Err(Error::dim("decode", format!("output {shape:?} for {} samples", batch.len())));
    }
    let p = shape[1];
    let scale = offset_scale(norm);
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let rows = &native.data()[b * p * 2..(b + 1) * p * 2];
            let last = s.window.last_position(s.target);
            match output {
                OutputKind::Velocities => {
                    let v: Vec<[f64; 2]> = rows
                        .chunks(2)
                        .map(|r| [norm.invert_value(VEL_X, r[0]), norm.invert_value(VEL_Y, r[1])])
                        .collect();
                    integrate_velocities(last, &v, DT)
                }
                OutputKind::Offsets => rows
                    .chunks(2)
                    .map(|r| [last[0] + r[0] * scale[0], last[1] + r[1] * scale[1]])
                    .collect(),
            }
        })
        .collect())
}
