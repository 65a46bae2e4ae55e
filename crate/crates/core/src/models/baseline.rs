//! Constant Velocity, the two-layer Linear model and the TCNN.

use rand_chacha::ChaCha8Rng;

use super::features::{velocity_history, Sample};
use super::layers::{dropout, Dense};
use super::{reshape_output, Dims, Forecaster, ModelConfig, ModelKind, OutputKind};
use crate::autodiff::{Tape, Var};
use crate::data::normalize::NormStats;
use crate::data::series::{VEL_X, VEL_Y};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// `p[i] = p_last + i·Δt·v_last` for `i = 1..=steps`.
pub fn constant_velocity_forecast(p_last: [f64; 2], v_last: [f64; 2], dt: f64, steps: usize) -> Vec<[f64; 2]> {
    (1..=steps)
        .map(|i| {
            let s = i as f64 * dt;
            [p_last[0] + s * v_last[0], p_last[1] + s * v_last[1]]
        })
        .collect()
}

/// Repeats the target's last observed velocity; has no parameters.
pub struct ConstantVelocity {
    dims: Dims,
    params: ParamStore,
}

impl ConstantVelocity {
    pub fn new(dims: Dims) -> Self {
        ConstantVelocity {
            dims,
            params: ParamStore::new(),
        }
    }
}

impl Forecaster for ConstantVelocity {
    fn kind(&self) -> ModelKind {
        ModelKind::ConstantVelocity
    }
    fn output(&self) -> OutputKind {
        OutputKind::Velocities
    }
    fn dims(&self) -> Dims {
        self.dims
    }
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(
        &self,
        tape: &mut Tape,
        _p: &Bound,
        batch: &[Sample],
        norm: &NormStats,
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let p = self.dims.forecast;
        let mut data = Vec::with_capacity(batch.len() * p * 2);
        for s in batch {
            let w = s.window;
            let last = w.history_steps() - 1;
            let v = [
                norm.apply_value(VEL_X, w.hist(last, s.target, VEL_X)),
                norm.apply_value(VEL_Y, w.hist(last, s.target, VEL_Y)),
            ];
            for _ in 0..p {
                data.extend_from_slice(&v);
            }
        }
        Ok(tape.constant(Tensor::from_vec(&[batch.len(), p, 2], data)))
    }
}

fn check_width(tape: &Tape, x: Var, want: usize, op: &'static str) -> Result<()> {
    let got = tape.value(x).last_dim();
    if got != want {
        return Err(Error::dim(op, format!("input width {got}, expected {want}")));
    }
    Ok(())
}

/// Flattened velocities → dense → ReLU → dropout → dense to `P·2` velocities.
pub struct Linear {
    dims: Dims,
    params: ParamStore,
    pub layer1: Dense,
    pub layer2: Dense,
    pub dropout: f64,
}

impl Linear {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let input = dims.history * dims.objects * 2;
        let layer1 = Dense::new(&mut params, "linear.layer1", input, config.linear_hidden, true, rng);
        let layer2 = Dense::new(&mut params, "linear.layer2", config.linear_hidden, dims.forecast * 2, true, rng);
        Ok(Linear {
            dims,
            params,
            layer1,
            layer2,
            dropout: config.dropout,
        })
    }

    /// `x [B × H·N·2]` → `[B × P·2]`.
    pub fn forward_flat(&self, tape: &mut Tape, p: &Bound, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        check_width(tape, x, self.layer1.input, "linear_forward")?;
        let h = self.layer1.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = dropout(tape, h, self.dropout, rng)?;
        self.layer2.forward(tape, p, h)
    }
}

impl Forecaster for Linear {
    fn kind(&self) -> ModelKind {
        ModelKind::Linear
    }
    fn output(&self) -> OutputKind {
        OutputKind::Velocities
    }
    fn dims(&self) -> Dims {
        self.dims
    }
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &[Sample],
        norm: &NormStats,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let x = velocity_history(batch, norm)?;
        let b = batch.len();
        let width = x.numel() / b.max(1);
        let x = tape.constant(x.reshape(&[b, width])?);
        let y = self.forward_flat(tape, p, x, rng)?;
        reshape_output(tape, y, b, self.dims.forecast)
    }
}

/// One residual block: weight-normed causal convolution, bias, ReLU, then
/// ReLU of the sum with the (projected) input.
#[derive(Clone, Debug)]
pub struct TcnnLayer {
    pub v: ParamId,
    pub g: ParamId,
    pub b: ParamId,
    pub proj: Option<ParamId>,
    pub dilation: usize,
}

pub struct Tcnn {
    dims: Dims,
    params: ParamStore,
    pub layers: Vec<TcnnLayer>,
    pub head: Dense,
    pub channels: usize,
}

impl Tcnn {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.tcnn_dilations.is_empty() || config.tcnn_kernel == 0 || config.tcnn_dilations.contains(&0) {
            return Err(Error::Configuration("tcnn needs kernel > 0 and positive dilations".into()));
        }
        let mut params = ParamStore::new();
        let channels = dims.objects * 2;
        let (k, f) = (config.tcnn_kernel, config.tcnn_filters);
        let mut layers = Vec::new();
        let mut cin = channels;
        for (l, &d) in config.tcnn_dilations.iter().enumerate() {
            let name = format!("tcnn.l{l}");
            let v = params.weight(format!("{name}.v"), &[k, cin, f], k * cin, rng);
            let g = params.ones(format!("{name}.g"), &[f]);
            let b = params.zeros(format!("{name}.b"), &[f]);
            let proj = (cin != f).then(|| params.weight(format!("{name}.proj"), &[cin, f], cin, rng));
            layers.push(TcnnLayer { v, g, b, proj, dilation: d });
            cin = f;
        }
        let head = Dense::new(&mut params, "tcnn.head", f, dims.forecast * 2, true, rng);
        Ok(Tcnn {
            dims,
            params,
            layers,
            head,
            channels,
        })
    }

    pub fn receptive_field(&self, kernel: usize) -> usize {
        1 + self.layers.iter().map(|l| (kernel - 1) * l.dilation).sum::<usize>()
    }

    /// Output of every layer for `x [B × H × C]`.
    pub fn features(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Vec<Var>> {
        check_width(tape, x, self.channels, "tcnn_forward")?;
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.weight_norm(p[layer.v], p[layer.g])?;
            let c = tape.causal_conv1d(h, w, layer.dilation)?;
            let c = tape.add_bias(c, p[layer.b])?;
            let c = tape.relu(c);
            let res = match layer.proj {
                Some(pr) => tape.matmul(h, p[pr])?,
                None => h,
            };
            let s = tape.add(c, res)?;
            h = tape.relu(s);
            outs.push(h);
        }
        Ok(outs)
    }

    /// `x [B × H × C]` → `[B × P·2]` from the last step's features.
    pub fn forward_seq(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let feats = self.features(tape, p, x)?;
        let top = *feats.last().expect("at least one layer");
        let steps = tape.value(top).shape()[1];
        let last = tape.select(top, 1, steps - 1)?;
        self.head.forward(tape, p, last)
    }
}

impl Forecaster for Tcnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Tcnn
    }
    fn output(&self) -> OutputKind {
        OutputKind::Velocities
    }
    fn dims(&self) -> Dims {
        self.dims
    }
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &[Sample],
        norm: &NormStats,
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let x = tape.constant(velocity_history(batch, norm)?);
        let y = self.forward_seq(tape, p, x)?;
        reshape_output(tape, y, batch.len(), self.dims.forecast)
    }
}
