//! Bounded proximity features: transformed offsets to the nearest object and
//! to fixed court landmarks.

use serde::{Deserialize, Serialize};

use super::raw::FEET_TO_METERS;
use super::series::FrameSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `f(x) = sgn(x) · 2 · exp(−|x| / 2)`, with `f(0) = 0`.
pub fn distance_transform(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * 2.0 * (-0.5 * x.abs()).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub hoops: [[f64; 2]; 2],
}

impl Landmarks {
    /// Rim centres of an NBA court in meters (5.25 ft from each baseline, mid-width).
    pub fn nba() -> Self {
        let y = 25.0 * FEET_TO_METERS;
        Landmarks {
            hoops: [
                [5.25 * FEET_TO_METERS, y],
                [(94.0 - 5.25) * FEET_TO_METERS, y],
            ],
        }
    }
}

impl Default for Landmarks {
    fn default() -> Self {
        Self::nba()
    }
}

/// Per-timestep context for one target object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    /// `[T × 2]` transformed per-axis offset to the nearest other object.
    pub nearest: Tensor,
    /// `[T × 2]` transformed offset to each hoop.
    pub hoop1: Tensor,
    pub hoop2: Tensor,
    /// Index of the nearest object per timestep.
    pub nearest_index: Vec<usize>,
}

/// Index of the closest other object; ties go to the lower index.
pub fn nearest_object(positions: &[[f64; 2]], target: usize) -> Option<usize> {
    let p = positions[target];
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in positions.iter().enumerate() {
        if i == target {
            continue;
        }
        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn transformed_offset(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    [
        distance_transform(to[0] - from[0]),
        distance_transform(to[1] - from[1]),
    ]
}

/// The three distance fields for one frame: nearest object, hoop 1, hoop 2.
pub fn frame_context(
    positions: &[[f64; 2]],
    target: usize,
    landmarks: &Landmarks,
) -> Result<([[f64; 2]; 3], usize)> {
    if positions.len() < 2 {
        return Err(Error::Configuration(
            "context features need at least two objects".into(),
        ));
    }
    if target >= positions.len() {
        return Err(Error::Parameter(format!(
            "target {target} out of range for {} objects",
            positions.len()
        )));
    }
    let p = positions[target];
    let near = nearest_object(positions, target).expect("at least two objects");
    Ok((
        [
            transformed_offset(p, positions[near]),
            transformed_offset(p, landmarks.hoops[0]),
            transformed_offset(p, landmarks.hoops[1]),
        ],
        near,
    ))
}

pub fn context_features(
    series: &FrameSeries,
    target: usize,
    landmarks: &Landmarks,
) -> Result<ContextFeatures> {
    let (t, n) = (series.len(), series.objects());
    let mut fields = [
        Vec::with_capacity(t * 2),
        Vec::with_capacity(t * 2),
        Vec::with_capacity(t * 2),
    ];
    let mut nearest_index = Vec::with_capacity(t);
    let mut frame = vec![[0.0; 2]; n];
    for ti in 0..t {
        for (o, slot) in frame.iter_mut().enumerate() {
            *slot = series.position(ti, o);
        }
        let (ctx, near) = frame_context(&frame, target, landmarks)?;
        for (dst, v) in fields.iter_mut().zip(ctx) {
            dst.extend_from_slice(&v);
        }
        nearest_index.push(near);
    }
    let [a, b, c] = fields;
    Ok(ContextFeatures {
        nearest: Tensor::from_vec(&[t, 2], a),
        hoop1: Tensor::from_vec(&[t, 2], b),
        hoop2: Tensor::from_vec(&[t, 2], c),
        nearest_index,
    })
}
