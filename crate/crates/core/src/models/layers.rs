//! Parameter blocks shared by several forecasters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// `y = x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.weight(format!("{name}.w"), &[input, output], input, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[output]));
        Dense { w, b, input, output }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

/// Inverted dropout; identity when `rng` is `None` or `rate` is zero.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let shape = tape.value(x).shape().to_vec();
            let n = tape.value(x).numel();
            let mask = (0..n)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            tape.mul_const(x, Tensor::from_vec(&shape, mask))
        }
        _ => Ok(x),
    }
}

/// One LSTM layer with gates fused as `(i, f, g, o)` along the output axis:
/// `W_x = [W_ii W_if W_ig W_io]`, `W_h = [W_hi W_hf W_hg W_ho]`, and a single
/// bias holding `b_i* + b_h*`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_x = store.weight(format!("{name}.w_x"), &[input, 4 * hidden], hidden, rng);
        let w_h = store.weight(format!("{name}.w_h"), &[hidden, 4 * hidden], hidden, rng);
        let b = store.zeros(format!("{name}.b"), &[4 * hidden]);
        LstmLayer {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }

    /// One step from an already projected input `xw = x W_x + b`.
    pub fn step_projected(
        &self,
        tape: &mut Tape,
        p: &Bound,
        xw: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let n = self.hidden;
        let hw = tape.matmul(h, p[self.w_h])?;
        let z = tape.add(xw, hw)?;
        let zi = tape.narrow(z, 0, n)?;
        let zf = tape.narrow(z, n, n)?;
        let zg = tape.narrow(z, 2 * n, n)?;
        let zo = tape.narrow(z, 3 * n, n)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Eq.-style single step `(h_t, c_t) = cell(x_t, h_{t-1}, c_{t-1})`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xw = tape.linear(x, p[self.w_x], Some(p[self.b]))?;
        self.step_projected(tape, p, xw, h, c)
    }

    /// Run over `x [B × T × input]`, returning every hidden state and the final cell.
    pub fn run(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        state: Option<(Var, Var)>,
    ) -> Result<(Vec<Var>, Var)> {
        let shape = tape.value(x).shape().to_vec();
        let (b, t) = (shape[0], shape[1]);
        let xw = tape.linear(x, p[self.w_x], Some(p[self.b]))?;
        let (mut h, mut c) = match state {
            Some(s) => s,
            None => {
                let z = Tensor::zeros(&[b, self.hidden]);
                (tape.constant(z.clone()), tape.constant(z))
            }
        };
        let mut hs = Vec::with_capacity(t);
        for ti in 0..t {
            let xt = tape.select(xw, 1, ti)?;
            let (h2, c2) = self.step_projected(tape, p, xt, h, c)?;
            h = h2;
            c = c2;
            hs.push(h);
        }
        Ok((hs, c))
    }
}

/// Stacked LSTM; returns the top layer's final hidden state `[B × hidden]`.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
    pub dropout: f64,
}

impl LstmStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..layers.max(1))
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                LstmLayer::new(store, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect();
        LstmStack { layers, dropout }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut seq = x;
        let mut last = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let (hs, _) = layer.run(tape, p, seq, None)?;
            last = hs.last().copied();
            if l + 1 < self.layers.len() {
                // [B × T × hidden] for the next layer
                let stacked = stack_time(tape, &hs)?;
                seq = dropout(tape, stacked, self.dropout, rng.as_deref_mut())?;
            }
        }
        Ok(last.expect("history has at least one step"))
    }
}

/// Stack `T` states `[B × C]` into `[B × T × C]`.
pub fn stack_time(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let shape = tape.value(xs[0]).shape().to_vec();
    let (b, c) = (shape[0], shape[1]);
    let joined = tape.concat(xs)?;
    tape.reshape(joined, &[b, xs.len(), c])
}

/// GRU layer, gates fused as `(r, z, n)`. The recurrent bias is kept apart
/// because the candidate applies the reset gate to `h W_hn + b_hn`.
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_x = store.weight(format!("{name}.w_x"), &[input, 3 * hidden], hidden, rng);
        let w_h = store.weight(format!("{name}.w_h"), &[hidden, 3 * hidden], hidden, rng);
        let b_x = store.zeros(format!("{name}.b_x"), &[3 * hidden]);
        let b_h = store.zeros(format!("{name}.b_h"), &[3 * hidden]);
        GruLayer {
            w_x,
            w_h,
            b_x,
            b_h,
            input,
            hidden,
        }
    }

    fn step_projected(&self, tape: &mut Tape, p: &Bound, xw: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let hw = tape.linear(h, p[self.w_h], Some(p[self.b_h]))?;
        let xr = tape.narrow(xw, 0, n)?;
        let xz = tape.narrow(xw, n, n)?;
        let xn = tape.narrow(xw, 2 * n, n)?;
        let hr = tape.narrow(hw, 0, n)?;
        let hz = tape.narrow(hw, n, n)?;
        let hn = tape.narrow(hw, 2 * n, n)?;
        let ar = tape.add(xr, hr)?;
        let r = tape.sigmoid(ar);
        let az = tape.add(xz, hz)?;
        let z = tape.sigmoid(az);
        let rh = tape.mul(r, hn)?;
        let an = tape.add(xn, rh)?;
        let cand = tape.tanh(an);
        // h' = (1 − z)·n + z·h
        let keep = tape.affine(z, -1.0, 1.0);
        let a = tape.mul(keep, cand)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }

    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let xw = tape.linear(x, p[self.w_x], Some(p[self.b_x]))?;
        self.step_projected(tape, p, xw, h)
    }

    /// Final hidden state after running over `x [R × T × input]` from zeros.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let (r, t) = (shape[0], shape[1]);
        let xw = tape.linear(x, p[self.w_x], Some(p[self.b_x]))?;
        let mut h = tape.constant(Tensor::zeros(&[r, self.hidden]));
        for ti in 0..t {
            let xt = tape.select(xw, 1, ti)?;
            h = self.step_projected(tape, p, xt, h)?;
        }
        Ok(h)
    }
}

/// Layer norm parameters (gain 1, bias 0).
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, eps: f64) -> Self {
        Norm {
            gain: store.ones(format!("{name}.gain"), &[width]),
            bias: store.zeros(format!("{name}.bias"), &[width]),
            eps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], self.eps)
    }
}
