//! The two-layer LSTM forecaster and the context-augmented CNN-LSTM.

use rand_chacha::ChaCha8Rng;

use super::features::{context_fields, velocity_history, Sample};
use super::layers::{Dense, LstmStack};
use super::{reshape_output, Dims, Forecaster, ModelConfig, ModelKind, OutputKind};
use crate::autodiff::{Activation, Tape, Var};
use crate::data::context::Landmarks;
use crate::data::normalize::NormStats;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

/// Velocities of all objects through a stacked LSTM; the final hidden state
/// goes through a linear head to `P·2` velocities in one shot.
pub struct Lstm {
    dims: Dims,
    params: ParamStore,
    pub stack: LstmStack,
    pub head: Dense,
}

impl Lstm {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let stack = LstmStack::new(
            &mut params,
            "lstm",
            dims.objects * 2,
            config.lstm_hidden,
            config.lstm_layers,
            config.dropout,
            rng,
        );
        let head = Dense::new(&mut params, "lstm.head", config.lstm_hidden, dims.forecast * 2, true, rng);
        Ok(Lstm {
            dims,
            params,
            stack,
            head,
        })
    }

    /// `x [B × H × N·2]` → `[B × P·2]`.
    pub fn forward_seq(&self, tape: &mut Tape, p: &Bound, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let h = self.stack.forward(tape, p, x, rng)?;
        self.head.forward(tape, p, h)
    }
}

impl Forecaster for Lstm {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
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
        let x = tape.constant(velocity_history(batch, norm)?);
        let y = self.forward_seq(tape, p, x, rng)?;
        reshape_output(tape, y, batch.len(), self.dims.forecast)
    }
}

pub const FIELD_NAMES: [&str; 4] = ["velocity", "nearest_object", "hoop_1", "hoop_2"];

/// One information field: convolution over (object rows × time), leaky
/// ReLU, an LSTM stack and an encoding head.
pub struct FieldEncoder {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stack: LstmStack,
    pub head: Dense,
    pub rows_out: usize,
    pub channels: usize,
}

/// CNN-LSTM over four fields, fused by a linear context head.
pub struct CnnLstm {
    dims: Dims,
    params: ParamStore,
    pub fields: Vec<FieldEncoder>,
    pub context_head: Dense,
    pub slope: f64,
    pub output: OutputKind,
    pub landmarks: Landmarks,
}

impl CnnLstm {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (kh, kw) = config.cnn_kernel;
        if kh == 0 || kw == 0 || kh > dims.objects || kw > dims.history {
            return Err(Error::Configuration(format!(
                "cnn kernel {kh}×{kw} does not fit {} objects × {} steps",
                dims.objects, dims.history
            )));
        }
        Activation::LeakyRelu(config.cnn_slope).validate()?;
        let mut params = ParamStore::new();
        let c = config.cnn_channels;
        let rows_out = dims.objects - kh + 1;
        let fields = FIELD_NAMES
            .iter()
            .map(|field| {
                let name = format!("cnn_lstm.{field}");
                let kernel = params.weight(format!("{name}.conv"), &[c, 2, kh, kw], 2 * kh * kw, rng);
                let bias = params.zeros(format!("{name}.conv_b"), &[c * rows_out]);
                let stack = LstmStack::new(
                    &mut params,
                    &format!("{name}.lstm"),
                    c * rows_out,
                    config.lstm_hidden,
                    config.lstm_layers,
                    config.dropout,
                    rng,
                );
                let head = Dense::new(
                    &mut params,
                    &format!("{name}.head"),
                    config.lstm_hidden,
                    config.cnn_field_width,
                    true,
                    rng,
                );
                FieldEncoder {
                    kernel,
                    bias,
                    stack,
                    head,
                    rows_out,
                    channels: c,
                }
            })
            .collect();
        let context_head = Dense::new(
            &mut params,
            "cnn_lstm.context_head",
            4 * config.cnn_field_width,
            dims.forecast * 2,
            true,
            rng,
        );
        Ok(CnnLstm {
            dims,
            params,
            fields,
            context_head,
            slope: config.cnn_slope,
            output: config.cnn_output,
            landmarks: config.landmarks,
        })
    }

    /// Fields `[B × 2 × N × H]` in the order of [`FIELD_NAMES`] → `[B × P·2]`.
    pub fn forward_fields(
        &self,
        tape: &mut Tape,
        p: &Bound,
        fields: &[Option<Var>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut encodings = Vec::with_capacity(4);
        for (i, enc) in self.fields.iter().enumerate() {
            let x = fields
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Configuration(format!("missing context field {:?}", FIELD_NAMES[i])))?;
            let conv = tape.conv2d(x, p[enc.kernel])?;
            let s = tape.value(conv).shape().to_vec();
            let (b, t) = (s[0], s[3]);
            let flat = tape.reshape(conv, &[b, enc.channels * enc.rows_out, t])?;
            let seq = tape.transpose(flat)?;
            let seq = tape.add_bias(seq, p[enc.bias])?;
            let seq = tape.leaky_relu(seq, self.slope)?;
            let h = enc.stack.forward(tape, p, seq, rng.as_deref_mut())?;
            encodings.push(enc.head.forward(tape, p, h)?);
        }
        let joined = tape.concat(&encodings)?;
        self.context_head.forward(tape, p, joined)
    }
}

impl Forecaster for CnnLstm {
    fn kind(&self) -> ModelKind {
        ModelKind::CnnLstm
    }
    fn output(&self) -> OutputKind {
        self.output
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
        let fields = context_fields(batch, norm, &self.landmarks)?;
        let vars: Vec<Option<Var>> = fields.into_iter().map(|f| Some(tape.constant(f))).collect();
        let y = self.forward_fields(tape, p, &vars, rng)?;
        reshape_output(tape, y, batch.len(), self.dims.forecast)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels::sigmoid;
    use crate::models::layers::LstmLayer;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    /// Scalar evaluation of the six cell equations, one unit at a time.
    fn reference_cell(
        wx: &Tensor,
        wh: &Tensor,
        b: &Tensor,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let pre = |gate: usize, j: usize| {
            let col = gate * n + j;
            let mut s = b.get(&[col]);
            for (k, xk) in x.iter().enumerate() {
                s += wx.get(&[k, col]) * xk;
            }
            for (k, hk) in h.iter().enumerate() {
                s += wh.get(&[k, col]) * hk;
            }
            s
        };
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for j in 0..n {
            let i = sigmoid(pre(0, j));
            let f = sigmoid(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sigmoid(pre(3, j));
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }

    fn cell_fixture(zero: bool) -> (ParamStore, LstmLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let layer = LstmLayer::new(&mut store, "cell", 3, 4, &mut rng);
        if zero {
            store.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
        } else {
            let b = store.get_mut(layer.b);
            *b = Tensor::uniform(&[16], 0.5, &mut rng);
        }
        (store, layer)
    }

    #[test]
    fn zero_cell_examples() {
        let (store, layer) = cell_fixture(true);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_vec(&[1, 3], vec![0.3, -1.0, 2.0]));
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        let c0 = tape.constant(Tensor::zeros(&[1, 4]));
        let (h1, c1) = layer.step(&mut tape, &p, x, h, c0).unwrap();
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
        let cv = vec![1.0, -2.0, 0.5, 3.0];
        let c = tape.constant(Tensor::from_vec(&[1, 4], cv.clone()));
        let (h1, c1) = layer.step(&mut tape, &p, x, h, c).unwrap();
        for j in 0..4 {
            assert_eq!(tape.value(c1).data()[j], 0.5 * cv[j]);
            assert!((tape.value(h1).data()[j] - 0.5 * (0.5 * cv[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_matches_scalar_reference_and_gate_ranges() {
        let (store, layer) = cell_fixture(false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let xv: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let hv: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cv: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let x = tape.constant(Tensor::from_vec(&[1, 3], xv.clone()));
            let h = tape.constant(Tensor::from_vec(&[1, 4], hv.clone()));
            let c = tape.constant(Tensor::from_vec(&[1, 4], cv.clone()));
            let (h1, c1) = layer.step(&mut tape, &p, x, h, c).unwrap();
            let (hr, cr) = reference_cell(store.get(layer.w_x), store.get(layer.w_h), store.get(layer.b), &xv, &hv, &cv);
            for j in 0..4 {
                assert!((tape.value(h1).data()[j] - hr[j]).abs() < 1e-12);
                assert!((tape.value(c1).data()[j] - cr[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn streaming_equals_whole_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let stack = LstmStack::new(&mut store, "s", 3, 5, 2, 0.0, &mut rng);
        let xs = Tensor::uniform(&[2, 7, 3], 1.5, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(xs.clone());
        let whole = stack.forward(&mut tape, &p, x, None).unwrap();
        let whole = tape.value(whole).clone();

        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let zeros = Tensor::zeros(&[2, 5]);
        let mut states: Vec<(Var, Var)> = (0..2)
            .map(|_| (tape.constant(zeros.clone()), tape.constant(zeros.clone())))
            .collect();
        let x = tape.constant(xs);
        for t in 0..7 {
            let mut inp = tape.select(x, 1, t).unwrap();
            for (l, layer) in stack.layers.iter().enumerate() {
                let (h, c) = states[l];
                let (h2, c2) = layer.step(&mut tape, &p, inp, h, c).unwrap();
                states[l] = (h2, c2);
                inp = h2;
            }
        }
        let streamed = tape.value(states[1].0);
        assert!(streamed.max_abs_diff(&whole) < 1e-12);
    }

    #[test]
    fn cnn_lstm_missing_field_is_named_and_width_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims {
            history: 6,
            forecast: 50,
            objects: 3,
        };
        let m = CnnLstm::new(&ModelConfig::miniature(), dims, &mut rng).unwrap();
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        let f = tape.constant(Tensor::zeros(&[1, 2, 3, 6]));
        let err = m.forward_fields(&mut tape, &p, &[Some(f), Some(f), None, Some(f)], None).unwrap_err();
        assert!(err.to_string().contains("hoop_1"), "{err}");
        let y = m.forward_fields(&mut tape, &p, &[Some(f); 4], None).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 100]);
    }

    #[test]
    fn cnn_lstm_zero_fields_with_zero_encoders_give_head_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = Dims {
            history: 5,
            forecast: 2,
            objects: 3,
        };
        let mut m = CnnLstm::new(&ModelConfig::miniature(), dims, &mut rng).unwrap();
        let bias_id = m.context_head.b.unwrap();
        for t in m.params_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let bias = Tensor::from_vec(&[4], vec![0.1, -0.2, 0.3, 0.4]);
        *m.params_mut().get_mut(bias_id) = bias.clone();
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        let f = tape.constant(Tensor::zeros(&[1, 2, 3, 5]));
        let y = m.forward_fields(&mut tape, &p, &[Some(f); 4], None).unwrap();
        assert_eq!(tape.value(y).data(), bias.data());
    }
}
