use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Smallest denominator of the relative error. Gradients below it are
    /// held to an absolute error of `tolerance · floor` instead, since central
    /// differences cannot resolve them beyond roughly `ε·|f| / step`.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (sampled), all when `None`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// When a coordinate fails, probe again with this smaller step. A
    /// coordinate that then passes had a ReLU kink inside the first bracket;
    /// it is listed in [`GradCheckReport::kinks`] and judged by the retry.
    pub kink_retry: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-12,
            max_coords: None,
            seed: 0,
            kink_retry: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordError {
    pub param: usize,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Worst coordinate per parameter tensor.
    pub per_param: Vec<Option<CoordError>>,
    pub coords_checked: usize,
    pub tolerance: f64,
    /// Coordinates whose first probe straddled a kink, with that probe's error.
    pub kinks: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param
            .iter()
            .flatten()
            .map(|c| c.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordError> {
        self.per_param
            .iter()
            .flatten()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<F>(f: &F, params: &[Tensor], grad: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_grad(grad)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient_check needs a scalar function, got {:?}",
            tape.value(out).shape()
        )));
    }
    Ok((tape, vars, out))
}

/// Compare tape gradients of a scalar function with central finite differences.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(opts.step > 0.0) {
        return Err(Error::Parameter(format!("step must be > 0, got {}", opts.step)));
    }
    let (tape, vars, out) = eval_scalar(&f, params, true)?;
    let grads = tape.backward(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        tolerance: opts.tolerance,
        ..Default::default()
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, vars[pi]);
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < p.numel() => {
                let mut v = sample(&mut rng, p.numel(), m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..p.numel()).collect(),
        };
        let mut worst: Option<CoordError> = None;
        for &c in &coords {
            let orig = work[pi].data()[c];
            let mut probe = |delta: f64| -> Result<f64> {
                work[pi].data_mut()[c] = orig + delta;
                let (t, _, o) = eval_scalar(&f, &work, false)?;
                let v = t.value(o).item();
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite evaluation perturbing param {pi} coordinate {c}"
                    )));
                }
                Ok(v)
            };
            let mut central = |h: f64| -> Result<f64> { Ok((probe(h)? - probe(-h)?) / (2.0 * h)) };
            let a = analytic.data()[c];
            let mut numeric = central(opts.step)?;
            let mut rel = relative_error(a, numeric, opts.floor);
            if let Some(h) = opts.kink_retry.filter(|_| rel >= opts.tolerance) {
                let retry = central(h)?;
                let retry_rel = relative_error(a, retry, opts.floor);
                if retry_rel < opts.tolerance {
                    report.kinks.push(CoordError {
                        param: pi,
                        flat_index: c,
                        analytic: a,
                        numeric,
                        rel_error: rel,
                    });
                    numeric = retry;
                    rel = retry_rel;
                }
            }
            work[pi].data_mut()[c] = orig;
            if worst.as_ref().map_or(true, |w| rel > w.rel_error) {
                worst = Some(CoordError {
                    param: pi,
                    flat_index: c,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.coords_checked += coords.len();
        report.per_param.push(worst);
    }
    Ok(report)
}
