use serde::{Deserialize, Serialize};

use super::series::{FrameSeries, POS_X, POS_Y};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One (history, forecast) slice of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// `[H × N × F]`
    pub history: Tensor,
    /// `[P × N × F]`
    pub future: Tensor,
    /// `[N × 2]`, positions at the last history frame.
    pub last_positions: Tensor,
    pub game_id: String,
    pub focal_team: String,
    /// Start frame in the source series.
    pub start: usize,
    pub object_ids: Vec<i64>,
    pub team_ids: Vec<i64>,
}

impl Window {
    pub fn history_steps(&self) -> usize {
        self.history.shape()[0]
    }

    pub fn forecast_steps(&self) -> usize {
        self.future.shape()[0]
    }

    pub fn objects(&self) -> usize {
        self.history.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.history.shape()[2]
    }

    pub fn hist(&self, t: usize, obj: usize, feat: usize) -> f64 {
        let (n, f) = (self.objects(), self.features());
        self.history.data()[(t * n + obj) * f + feat]
    }

    pub fn fut(&self, t: usize, obj: usize, feat: usize) -> f64 {
        let (n, f) = (self.objects(), self.features());
        self.future.data()[(t * n + obj) * f + feat]
    }

    pub fn last_position(&self, obj: usize) -> [f64; 2] {
        let d = self.last_positions.data();
        [d[obj * 2], d[obj * 2 + 1]]
    }

    /// Ground-truth future positions of one object, `[P × 2]`.
    pub fn future_positions(&self, obj: usize) -> Vec<[f64; 2]> {
        (0..self.forecast_steps())
            .map(|t| [self.fut(t, obj, POS_X), self.fut(t, obj, POS_Y)])
            .collect()
    }

    /// Stable content key (game, start, shape) for leakage checks.
    pub fn key(&self) -> String {
        format!(
            "{}@{}:{}+{}",
            self.game_id,
            self.start,
            self.history_steps(),
            self.forecast_steps()
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub history_steps: usize,
    pub forecast_steps: usize,
    pub stride: usize,
    /// Series too short to yield a window.
    pub skipped_series: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn extend(&mut self, other: WindowSet) {
        self.windows.extend(other.windows);
        self.skipped_series += other.skipped_series;
    }
}

/// Number of windows `floor((T − H − P) / stride) + 1`, zero when `T < H + P`.
pub fn window_count(t: usize, history: usize, forecast: usize, stride: usize) -> usize {
    if t < history + forecast || stride == 0 {
        0
    } else {
        (t - history - forecast) / stride + 1
    }
}

pub fn make_windows(
    series: &FrameSeries,
    history_steps: usize,
    forecast_steps: usize,
    stride: usize,
) -> Result<WindowSet> {
    if history_steps == 0 || forecast_steps == 0 || stride == 0 {
        return Err(Error::Parameter(format!(
            "history ({history_steps}), forecast ({forecast_steps}) and stride ({stride}) must be positive"
        )));
    }
    let (t, n, f) = (series.len(), series.objects(), series.feature_count());
    let count = window_count(t, history_steps, forecast_steps, stride);
    let frame = n * f;
    let data = series.values.data();
    let windows = (0..count)
        .map(|k| {
            let s = k * stride;
            let h_end = s + history_steps;
            let p_end = h_end + forecast_steps;
            let history = Tensor::from_vec(&[history_steps, n, f], data[s * frame..h_end * frame].to_vec());
            let future = Tensor::from_vec(
                &[forecast_steps, n, f],
                data[h_end * frame..p_end * frame].to_vec(),
            );
            let last: Vec<f64> = (0..n)
                .flat_map(|o| {
                    let p = series.position(h_end - 1, o);
                    [p[0], p[1]]
                })
                .collect();
            Window {
                history,
                future,
                last_positions: Tensor::from_vec(&[n, 2], last),
                game_id: series.game_id.clone(),
                focal_team: series.focal_team.clone(),
                start: s,
                object_ids: series.object_ids.clone(),
                team_ids: series.team_ids.clone(),
            }
        })
        .collect();
    Ok(WindowSet {
        windows,
        history_steps,
        forecast_steps,
        stride,
        skipped_series: usize::from(count == 0),
    })
}
