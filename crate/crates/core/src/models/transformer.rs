//! Encoder-only transformer with a causal convolutional temporal embedding.

use rand_chacha::ChaCha8Rng;

use super::features::{state_history, Sample};
use super::layers::{Dense, Norm};
use super::{reshape_output, Dims, Forecaster, ModelConfig, ModelKind, OutputKind, Pooling};
use crate::autodiff::{Tape, Var};
use crate::data::normalize::NormStats;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Causal 1-D convolution from raw per-step features to `d_model`.
#[derive(Clone, Debug)]
pub struct TemporalEmbedding {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub width: usize,
}

impl TemporalEmbedding {
    pub fn new(store: &mut ParamStore, input: usize, width: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        TemporalEmbedding {
            kernel: store.weight("transformer.embed.kernel", &[k, input, width], k * input, rng),
            bias: store.zeros("transformer.embed.bias", &[width]),
            input,
            width,
        }
    }

    /// `[B × H × input]` → `[B × H × d_model]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let got = tape.value(x).last_dim();
        if got != self.input {
            return Err(Error::dim("temporal_embed", format!("feature width {got}, expected {}", self.input)));
        }
        let y = tape.causal_conv1d(x, p[self.kernel], 1)?;
        tape.add_bias(y, p[self.bias])
    }
}

/// Sinusoidal position table `[H × d]`.
pub fn sinusoidal(h: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[h, d]);
    for pos in 0..h {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            t.set(&[pos, i], if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub heads: usize,
    pub d_k: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, d_k: usize, rng: &mut ChaCha8Rng) -> Self {
        let inner = heads * d_k;
        Attention {
            w_q: store.weight(format!("{name}.w_q"), &[d, inner], d, rng),
            w_k: store.weight(format!("{name}.w_k"), &[d, inner], d, rng),
            w_v: store.weight(format!("{name}.w_v"), &[d, inner], d, rng),
            w_o: store.weight(format!("{name}.w_o"), &[inner, d], inner, rng),
            b_o: store.zeros(format!("{name}.b_o"), &[d]),
            heads,
            d_k,
        }
    }

    /// Per-head attention weights `softmax(Q Kᵀ/√d_k)` `[B × H × H]` and
    /// values `[B × H × d_k]`.
    pub fn weights(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Vec<(Var, Var)>> {
        let q = tape.matmul(x, p[self.w_q])?;
        let k = tape.matmul(x, p[self.w_k])?;
        let v = tape.matmul(x, p[self.w_v])?;
        let scale = 1.0 / (self.d_k as f64).sqrt();
        (0..self.heads)
            .map(|h| {
                let qh = tape.narrow(q, h * self.d_k, self.d_k)?;
                let kh = tape.narrow(k, h * self.d_k, self.d_k)?;
                let vh = tape.narrow(v, h * self.d_k, self.d_k)?;
                let kt = tape.transpose(kh)?;
                let s = tape.bmm(qh, kt)?;
                let s = tape.scale(s, scale);
                Ok((tape.softmax(s)?, vh))
            })
            .collect()
    }

    /// Full (unmasked) multi-head attention, `[B × H × d]` → same.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let heads = self.weights(tape, p, x)?;
        let outs = heads
            .into_iter()
            .map(|(a, v)| tape.bmm(a, v))
            .collect::<Result<Vec<_>>>()?;
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat(&outs)? };
        tape.linear(joined, p[self.w_o], Some(p[self.b_o]))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: Attention,
    pub norm1: Norm,
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub norm2: Norm,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, d_k: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_model;
        EncoderBlock {
            attention: Attention::new(store, &format!("{name}.mha"), d, config.heads, d_k, rng),
            norm1: Norm::new(store, &format!("{name}.norm1"), d, config.layer_norm_eps),
            ffn1: Dense::new(store, &format!("{name}.ffn1"), d, config.ffn_hidden, true, rng),
            ffn2: Dense::new(store, &format!("{name}.ffn2"), config.ffn_hidden, d, true, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), d, config.layer_norm_eps),
        }
    }

    /// `ReLU(x W₁ + b₁) W₂ + b₂`.
    pub fn ffn(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.ffn1.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.ffn2.forward(tape, p, h)
    }

    /// Post-norm: `x₁ = LN(x + MHA(x))`, `x₂ = LN(x₁ + FFN(x₁))`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let a = self.attention.forward(tape, p, x)?;
        let s = tape.add(x, a)?;
        let x1 = self.norm1.forward(tape, p, s)?;
        let f = self.ffn(tape, p, x1)?;
        let s = tape.add(x1, f)?;
        self.norm2.forward(tape, p, s)
    }
}

pub struct Transformer {
    dims: Dims,
    params: ParamStore,
    pub embed: TemporalEmbedding,
    pub blocks: Vec<EncoderBlock>,
    pub head: Dense,
    pub pooling: Pooling,
    pub positional: bool,
}

impl Transformer {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = config.d_model;
        let d_k = match config.d_k {
            Some(k) if k > 0 => k,
            Some(_) => return Err(Error::Configuration("d_k must be positive".into())),
            None => {
                if config.heads == 0 || d % config.heads != 0 {
                    return Err(Error::Configuration(format!(
                        "d_model {d} is not divisible by {} heads",
                        config.heads
                    )));
                }
                d / config.heads
            }
        };
        if config.embed_kernel == 0 {
            return Err(Error::Configuration("embedding kernel must be at least 1".into()));
        }
        let mut params = ParamStore::new();
        let embed = TemporalEmbedding::new(&mut params, dims.objects * 4, d, config.embed_kernel, rng);
        let blocks = (0..config.blocks)
            .map(|b| EncoderBlock::new(&mut params, &format!("transformer.block{b}"), config, d_k, rng))
            .collect();
        let head = Dense::new(&mut params, "transformer.head", d, dims.forecast * 2, true, rng);
        Ok(Transformer {
            dims,
            params,
            embed,
            blocks,
            head,
            pooling: config.pooling,
            positional: config.positional_encoding,
        })
    }

    /// Per-step encodings `[B × H × d]`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = self.embed.forward(tape, p, x)?;
        if self.positional {
            let s = tape.value(h).shape().to_vec();
            let pe = sinusoidal(s[1], s[2]);
            let tiled = Tensor::from_vec(&s, pe.data().repeat(s[0]));
            let c = tape.constant(tiled);
            h = tape.add(h, c)?;
        }
        for block in &self.blocks {
            h = block.forward(tape, p, h)?;
        }
        Ok(h)
    }

    /// `x [B × H × 4N]` → `[B × P·2]`.
    pub fn forward_seq(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.encode(tape, p, x)?;
        let steps = tape.value(h).shape()[1];
        let pooled = match self.pooling {
            Pooling::Last => tape.select(h, 1, steps - 1)?,
            Pooling::Mean => tape.mean_axis(h, 1)?,
        };
        self.head.forward(tape, p, pooled)
    }
}

impl Forecaster for Transformer {
    fn kind(&self) -> ModelKind {
        ModelKind::Transformer
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
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let x = tape.constant(state_history(batch, norm)?);
        let y = self.forward_seq(tape, p, x)?;
        reshape_output(tape, y, batch.len(), self.dims.forecast)
    }
}
