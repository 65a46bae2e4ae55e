//! Forecast records and metric reports for a trained model.

use courtcast::data::NormStats;
use courtcast::eval::{ForecastRecord, MetricReport};
use courtcast::models::{predict, Forecaster, Sample};

use crate::error::Result;

pub fn forecast_records(model: &dyn Forecaster, samples: &[Sample], norm: &NormStats, batch: usize) -> Result<Vec<ForecastRecord>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        for (s, pred) in chunk.iter().zip(predict(model, chunk, norm)?) {
            let w = s.window;
            out.push(ForecastRecord::new(pred, w.future_positions(s.target), w.last_position(s.target))?);
        }
    }
    Ok(out)
}

pub fn evaluate(model: &dyn Forecaster, samples: &[Sample], norm: &NormStats, batch: usize) -> Result<MetricReport> {
    let records = forecast_records(model, samples, norm, batch)?;
    Ok(MetricReport::from_records(model.kind().name(), &records)?)
}
