use serde::{Deserialize, Serialize};

use super::raw::{Moment, RawGame, BALL_TEAM_ID};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::DT;

/// Gaps longer than this split a span instead of being interpolated.
pub const MAX_GAP_S: f64 = 0.5;

pub const POS_X: usize = 0;
pub const POS_Y: usize = 1;
pub const VEL_X: usize = 2;
pub const VEL_Y: usize = 3;

/// A uniformly sampled scene `[T × N × F]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSeries {
    pub game_id: String,
    pub focal_team: String,
    pub times: Vec<f64>,
    pub object_ids: Vec<i64>,
    pub team_ids: Vec<i64>,
    pub features: Vec<String>,
    /// Meters and meters per second.
    pub values: Tensor,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn objects(&self) -> usize {
        self.object_ids.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn get(&self, t: usize, obj: usize, feat: usize) -> f64 {
        let (n, f) = (self.objects(), self.feature_count());
        self.values.data()[(t * n + obj) * f + feat]
    }

    pub fn position(&self, t: usize, obj: usize) -> [f64; 2] {
        [self.get(t, obj, POS_X), self.get(t, obj, POS_Y)]
    }

    pub fn has_velocities(&self) -> bool {
        self.features.len() >= 4
    }

    pub fn ball_index(&self) -> Option<usize> {
        self.team_ids.iter().position(|&t| t == BALL_TEAM_ID)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResampleReport {
    pub spans: usize,
    /// Spans too short for one window.
    pub dropped_short: usize,
    pub flagged_moments: usize,
}

fn interpolate(a: &Moment, b: &Moment, t: f64) -> Vec<[f64; 2]> {
    let w = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
    a.objects
        .iter()
        .zip(&b.objects)
        .map(|(p, q)| [p.x + w * (q.x - p.x), p.y + w * (q.y - p.y)])
        .collect()
}

fn span_to_series(game: &RawGame, span: &[&Moment]) -> FrameSeries {
    let first = span[0];
    let t0 = first.t;
    let t_end = span[span.len() - 1].t;
    let steps = ((t_end - t0) / DT + 1e-9).floor() as usize + 1;
    let n = first.objects.len();
    let mut data = Vec::with_capacity(steps * n * 2);
    let mut times = Vec::with_capacity(steps);
    let mut k = 0;
    for i in 0..steps {
        let t = t0 + i as f64 * DT;
        while k + 1 < span.len() && span[k + 1].t <= t + 1e-9 {
            k += 1;
        }
        let row = if (span[k].t - t).abs() <= 1e-9 || k + 1 == span.len() {
            span[k].objects.iter().map(|o| [o.x, o.y]).collect()
        } else {
            interpolate(span[k], span[k + 1], t)
        };
        for p in row {
            data.extend_from_slice(&p);
        }
        times.push(t);
    }
    FrameSeries {
        game_id: game.game_id.clone(),
        focal_team: game.focal_team.clone(),
        times,
        object_ids: first.objects.iter().map(|o| o.object_id).collect(),
        team_ids: first.objects.iter().map(|o| o.team_id).collect(),
        features: vec!["pos_x".into(), "pos_y".into()],
        values: Tensor::from_vec(&[steps, n, 2], data),
    }
}

/// Interpolate each contiguous span of valid moments onto the 0.04 s grid.
///
/// Spans break at gaps above [`MAX_GAP_S`] and where the object set changes.
/// Spans shorter than `min_steps` frames are dropped and counted.
pub fn resample_uniform(game: &RawGame, min_steps: usize) -> (Vec<FrameSeries>, ResampleReport) {
    let mut report = ResampleReport {
        flagged_moments: game.flagged_count(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for event in &game.events {
        let mut valid: Vec<&Moment> = event.moments.iter().filter(|m| !m.flagged).collect();
        valid.sort_by(|a, b| a.t.total_cmp(&b.t));
        valid.dedup_by(|b, a| (b.t - a.t).abs() < 1e-9);
        let mut start = 0;
        for i in 1..=valid.len() {
            let split = i == valid.len()
                || valid[i].t - valid[i - 1].t > MAX_GAP_S + 1e-9
                || valid[i].object_ids() != valid[i - 1].object_ids();
            if !split {
                continue;
            }
            let span = &valid[start..i];
            start = i;
            if span.len() < 2 {
                report.dropped_short += 1;
                continue;
            }
            let series = span_to_series(game, span);
            if series.len() < min_steps.max(2) {
                report.dropped_short += 1;
                continue;
            }
            report.spans += 1;
            out.push(series);
        }
    }
    (out, report)
}

/// Append `v_x, v_y` by backward differences; the first frame copies the second.
pub fn derive_velocities(series: &FrameSeries) -> Result<FrameSeries> {
    if series.feature_count() < 2 || series.features[0] != "pos_x" || series.features[1] != "pos_y" {
        return Err(Error::Configuration(
            "derive_velocities needs pos_x, pos_y as the first features".into(),
        ));
    }
    let (t, n, f) = (series.len(), series.objects(), series.feature_count());
    if t < 2 {
        return Err(Error::Configuration(format!(
            "need at least 2 frames to derive velocities, got {t}"
        )));
    }
    let nf = f + 2;
    let mut data = vec![0.0; t * n * nf];
    for ti in 0..t {
        for o in 0..n {
            let src = (ti * n + o) * f;
            let dst = (ti * n + o) * nf;
            data[dst..dst + f].copy_from_slice(&series.values.data()[src..src + f]);
            let cur = ti.max(1);
            let (a, b) = (series.position(cur - 1, o), series.position(cur, o));
            data[dst + f] = (b[0] - a[0]) / DT;
            data[dst + f + 1] = (b[1] - a[1]) / DT;
        }
    }
    let mut features = series.features.clone();
    features.push("v_x".into());
    features.push("v_y".into());
    Ok(FrameSeries {
        features,
        values: Tensor::from_vec(&[t, n, nf], data),
        ..series.clone()
    })
}
