//! Legendre Memory Unit: fixed state-space memory, its discretization, the
//! cell, and the two-layer forecaster.

use rand_chacha::ChaCha8Rng;

use super::features::{history_channels, Sample};
use super::layers::{dropout, Dense};
use super::{reshape_output, Dims, Forecaster, LmuInput, LmuMethod, ModelConfig, ModelKind, OutputKind};
use crate::autodiff::{Tape, Var};
use crate::data::normalize::NormStats;
use crate::data::series::{POS_X, POS_Y, VEL_X, VEL_Y};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// State matrices as printed: `a_ij = −1` for `i < j`, else `(−1)^(i−j+1)`;
/// `b_i = (2i+1)(−1)^i`. With `scaled`, row `i` of `A` is also multiplied by
/// `2i+1`.
pub fn lmu_matrices(d: usize, scaled: bool) -> (Tensor, Tensor) {
    let mut a = Tensor::zeros(&[d, d]);
    for i in 0..d {
        let row_scale = if scaled { (2 * i + 1) as f64 } else { 1.0 };
        for j in 0..d {
            let v = if i < j {
                -1.0
            } else if (i - j) % 2 == 0 {
                -1.0
            } else {
                1.0
            };
            a.set(&[i, j], row_scale * v);
        }
    }
    let b = (0..d)
        .map(|i| (2 * i + 1) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    (a, Tensor::from_vec(&[d], b))
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Solve `D X = N` for square `n × n` matrices by LU with partial pivoting.
fn solve(mut d: Vec<f64>, mut rhs: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| d[a * n + col].abs().total_cmp(&d[b * n + col].abs()))
            .expect("non-empty range");
        if d[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numeric(format!("singular system at column {col}")));
        }
        if pivot != col {
            for j in 0..n {
                d.swap(pivot * n + j, col * n + j);
                rhs.swap(pivot * n + j, col * n + j);
            }
        }
        let p = d[col * n + col];
        for r in col + 1..n {
            let f = d[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                d[r * n + j] -= f * d[col * n + j];
            }
            for j in 0..n {
                rhs[r * n + j] -= f * rhs[col * n + j];
            }
        }
    }
    for col in (0..n).rev() {
        let p = d[col * n + col];
        for j in 0..n {
            rhs[col * n + j] /= p;
        }
        for r in 0..col {
            let f = d[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                rhs[r * n + j] -= f * rhs[col * n + j];
            }
        }
    }
    Ok(rhs)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé(8, 8)
/// approximant, the scaled matrix kept at 1-norm ≤ 0.5.
pub fn expm(m: &Tensor) -> Result<Tensor> {
    let n = match *m.shape() {
        [r, c] if r == c => r,
        _ => return Err(Error::dim("expm", format!("square matrix expected, got {:?}", m.shape()))),
    };
    m.validate_finite()?;
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| m.data()[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(s);
    let a: Vec<f64> = m.data().iter().map(|v| v * scale).collect();

    const Q: usize = 8;
    // c_k = (2q−k)! q! / ((2q)! k! (q−k)!)
    let mut coef = vec![1.0; Q + 1];
    for k in 1..=Q {
        coef[k] = coef[k - 1] * (Q + 1 - k) as f64 / (k * (2 * Q + 1 - k)) as f64;
    }
    let mut num = vec![0.0; n * n];
    let mut den = vec![0.0; n * n];
    let mut power = Tensor::eye(n).into_data();
    for (k, &c) in coef.iter().enumerate() {
        if k > 0 {
            power = matmul_sq(&power, &a, n);
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for (i, &p) in power.iter().enumerate() {
            num[i] += c * p;
            den[i] += sign * c * p;
        }
    }
    let mut e = solve(den, num, n)?;
    for _ in 0..s {
        e = matmul_sq(&e, &e, n);
    }
    let out = Tensor::from_vec(&[n, n], e);
    out.validate_finite()?;
    Ok(out)
}

/// Discrete `(Ā, B̄)` for a step of `delta` samples and window `theta`.
///
/// Zero-order hold uses the exponential of the augmented matrix
/// `[[A·δ, B·δ], [0, 0]]` with `δ = delta/theta`, whose top blocks are
/// `exp(A·δ)` and `A⁻¹(exp(A·δ) − I)B`.
pub fn discretize(a: &Tensor, b: &Tensor, theta: f64, delta: f64, method: LmuMethod) -> Result<(Tensor, Tensor)> {
    if !(theta > 0.0) || !(delta > 0.0) {
        return Err(Error::Parameter(format!("theta ({theta}) and delta ({delta}) must be positive")));
    }
    let d = b.numel();
    if a.shape() != [d, d] {
        return Err(Error::shapes("discretize", a.shape(), b.shape()));
    }
    let k = delta / theta;
    match method {
        LmuMethod::Euler => {
            let mut ab = Tensor::eye(d);
            for (x, y) in ab.data_mut().iter_mut().zip(a.data()) {
                *x += k * y;
            }
            Ok((ab, b.map(|v| k * v)))
        }
        LmuMethod::Zoh => {
            let n = d + 1;
            let mut m = Tensor::zeros(&[n, n]);
            for i in 0..d {
                for j in 0..d {
                    m.set(&[i, j], k * a.get(&[i, j]));
                }
                m.set(&[i, d], k * b.get(&[i]));
            }
            let e = expm(&m)?;
            let mut ab = Tensor::zeros(&[d, d]);
            let mut bb = Tensor::zeros(&[d]);
            for i in 0..d {
                for j in 0..d {
                    ab.set(&[i, j], e.get(&[i, j]));
                }
                bb.set(&[i], e.get(&[i, d]));
            }
            Ok((ab, bb))
        }
    }
}

/// One LMU layer. `Ā`, `B̄` are fixed; everything else is trained.
#[derive(Clone, Debug)]
pub struct LmuLayer {
    pub e_x: ParamId,
    pub e_h: ParamId,
    pub e_m: ParamId,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub w_m: ParamId,
    /// `Āᵀ [d × d]` and `B̄ᵀ [1 × d]`, right-multiplied onto row states.
    pub a_t: Tensor,
    pub b_t: Tensor,
    pub input: usize,
    pub hidden: usize,
    pub order: usize,
}

/// Tape handles for a layer's fixed matrices, created once per pass.
#[derive(Clone, Copy, Debug)]
pub struct LmuConstants {
    pub a_t: Var,
    pub b_t: Var,
}

impl LmuLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        a_bar: &Tensor,
        b_bar: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = b_bar.numel();
        let e_x = store.weight(format!("{name}.e_x"), &[input, 1], input, rng);
        // recurrent encoders start at zero so the memory begins as a pure filter of the input
        let e_h = store.zeros(format!("{name}.e_h"), &[hidden, 1]);
        let e_m = store.zeros(format!("{name}.e_m"), &[d, 1]);
        let w_x = store.weight(format!("{name}.w_x"), &[input, hidden], input, rng);
        let w_h = store.weight(format!("{name}.w_h"), &[hidden, hidden], hidden, rng);
        let w_m = store.weight(format!("{name}.w_m"), &[d, hidden], d, rng);
        let a_t = crate::autodiff::kernels::transpose_last2(a_bar)?;
        let b_t = b_bar.clone().reshape(&[1, d])?;
        Ok(LmuLayer {
            e_x,
            e_h,
            e_m,
            w_x,
            w_h,
            w_m,
            a_t,
            b_t,
            input,
            hidden,
            order: d,
        })
    }

    pub fn constants(&self, tape: &mut Tape) -> LmuConstants {
        LmuConstants {
            a_t: tape.constant(self.a_t.clone()),
            b_t: tape.constant(self.b_t.clone()),
        }
    }

    /// `u = e_xᵀx + e_hᵀh + e_mᵀm`, `m' = Ām + B̄u`, `h' = tanh(W_x x + W_h h + W_m m')`
    /// on row-batched states `x [B × in]`, `h [B × hidden]`, `m [B × d]`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, k: LmuConstants, x: Var, h: Var, m: Var) -> Result<(Var, Var)> {
        let ux = tape.matmul(x, p[self.e_x])?;
        let uh = tape.matmul(h, p[self.e_h])?;
        let um = tape.matmul(m, p[self.e_m])?;
        let u = tape.add(ux, uh)?;
        let u = tape.add(u, um)?;
        let am = tape.matmul(m, k.a_t)?;
        let bu = tape.matmul(u, k.b_t)?;
        let m_new = tape.add(am, bu)?;
        let hx = tape.matmul(x, p[self.w_x])?;
        let hh = tape.matmul(h, p[self.w_h])?;
        let hm = tape.matmul(m_new, p[self.w_m])?;
        let s = tape.add(hx, hh)?;
        let s = tape.add(s, hm)?;
        Ok((tape.tanh(s), m_new))
    }

    /// Run over `x [B × T × in]` from zero states; returns every hidden state.
    pub fn run(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let shape = tape.value(x).shape().to_vec();
        let (b, t) = (shape[0], shape[1]);
        if shape[2] != self.input {
            return Err(Error::dim("lmu", format!("input width {} vs {}", shape[2], self.input)));
        }
        let k = self.constants(tape);
        let mut h = tape.constant(Tensor::zeros(&[b, self.hidden]));
        let mut m = tape.constant(Tensor::zeros(&[b, self.order]));
        let mut hs = Vec::with_capacity(t);
        for ti in 0..t {
            let xt = tape.select(x, 1, ti)?;
            let (h2, m2) = self.step(tape, p, k, xt, h, m)?;
            h = h2;
            m = m2;
            hs.push(h);
        }
        Ok(hs)
    }
}

pub struct Lmu {
    dims: Dims,
    params: ParamStore,
    pub layer1: LmuLayer,
    pub layer2: LmuLayer,
    pub head: Dense,
    pub dropout: f64,
    pub input: LmuInput,
}

pub fn input_channels(input: LmuInput) -> &'static [usize] {
    match input {
        LmuInput::Velocities => &[VEL_X, VEL_Y],
        LmuInput::Positions => &[POS_X, POS_Y],
        LmuInput::PositionsVelocities => &[POS_X, POS_Y, VEL_X, VEL_Y],
    }
}

impl Lmu {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.lmu_order == 0 {
            return Err(Error::Configuration("lmu order must be at least 1".into()));
        }
        let (a, b) = lmu_matrices(config.lmu_order, config.lmu_scaled);
        let (a_bar, b_bar) = discretize(&a, &b, config.lmu_theta, 1.0, config.lmu_method)?;
        let mut params = ParamStore::new();
        let input = dims.objects * input_channels(config.lmu_input).len();
        let h = config.lmu_hidden;
        let layer1 = LmuLayer::new(&mut params, "lmu.l0", input, h, &a_bar, &b_bar, rng)?;
        let layer2 = LmuLayer::new(&mut params, "lmu.l1", h, h, &a_bar, &b_bar, rng)?;
        let head = Dense::new(&mut params, "lmu.head", h, dims.forecast * 2, true, rng);
        Ok(Lmu {
            dims,
            params,
            layer1,
            layer2,
            head,
            dropout: config.dropout,
            input: config.lmu_input,
        })
    }

    /// `x [B × H × in]` → `[B × P·2]` from the second layer's final state.
    pub fn forward_seq(&self, tape: &mut Tape, p: &Bound, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let hs = self.layer1.run(tape, p, x)?;
        let seq = super::layers::stack_time(tape, &hs)?;
        let seq = dropout(tape, seq, self.dropout, rng)?;
        let hs = self.layer2.run(tape, p, seq)?;
        let last = *hs.last().expect("history has at least one step");
        self.head.forward(tape, p, last)
    }
}

impl Forecaster for Lmu {
    fn kind(&self) -> ModelKind {
        ModelKind::Lmu
    }
    fn output(&self) -> OutputKind {
        OutputKind::Offsets
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
        let x = tape.constant(history_channels(batch, norm, input_channels(self.input))?);
        let y = self.forward_seq(tape, p, x, rng)?;
        reshape_output(tape, y, batch.len(), self.dims.forecast)
    }
}
