use serde::{Deserialize, Serialize};

use super::window::Window;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel z-score statistics over the last axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fit from rows of `channels` values each.
    pub fn fit_rows<'a>(
        names: &[String],
        rows: impl Iterator<Item = &'a [f64]>,
    ) -> Result<NormStats> {
        let c = names.len();
        let mut n = 0usize;
        let mut mean = vec![0.0; c];
        let mut m2 = vec![0.0; c];
        // Welford
        for row in rows {
            if row.len() != c {
                return Err(Error::dim(
                    "fit_normalizer",
                    format!("row of {} values for {c} channels", row.len()),
                ));
            }
            n += 1;
            for j in 0..c {
                let d = row[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        if n == 0 {
            return Err(Error::Configuration("cannot fit normalizer on no data".into()));
        }
        let std: Vec<f64> = m2.iter().map(|v| (v / n as f64).sqrt()).collect();
        if let Some(j) = std.iter().position(|&s| !(s > 1e-12)) {
            return Err(Error::Configuration(format!(
                "channel {:?} has zero variance",
                names[j]
            )));
        }
        Ok(NormStats {
            names: names.to_vec(),
            mean,
            std,
        })
    }

    /// Fit on the history and future frames of training windows.
    pub fn fit(train: &[Window], names: &[String]) -> Result<NormStats> {
        if train.is_empty() {
            return Err(Error::Configuration("training windows are empty".into()));
        }
        let f = names.len();
        let rows = train.iter().flat_map(|w| {
            w.history
                .data()
                .chunks(f)
                .chain(w.future.data().chunks(f))
        });
        Self::fit_rows(names, rows)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_value(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn invert_value(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.last_dim() != self.channels() {
            return Err(Error::dim(
                "normalize",
                format!("tensor {:?} vs {} channels", t.shape(), self.channels()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let c = self.channels();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.apply_value(i % c, *v);
        }
        Ok(out)
    }

    pub fn invert(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let c = self.channels();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.invert_value(i % c, *v);
        }
        Ok(out)
    }
}
