//! The eight forecasters behind one trait.
//!
//! Every model maps a batch of [`Sample`]s to a native output `[B × P × 2]`:
//! either normalized velocities (integrated from the last known position) or
//! position offsets from the last known position, scaled by the velocity
//! standard deviation.

pub mod baseline;
pub mod check;
pub mod features;
pub mod graph;
pub mod layers;
pub mod lmu;
pub mod recurrent;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::context::Landmarks;
use crate::data::graph::EdgeRule;
use crate::data::normalize::NormStats;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

pub use features::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "cv")]
    ConstantVelocity,
    Linear,
    Tcnn,
    Lstm,
    CnnLstm,
    Lmu,
    Gnn,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::ConstantVelocity,
        ModelKind::Linear,
        ModelKind::Tcnn,
        ModelKind::Lstm,
        ModelKind::CnnLstm,
        ModelKind::Lmu,
        ModelKind::Gnn,
        ModelKind::Transformer,
    ];

    /// The context-using models evaluated across teams.
    pub const CONTEXT: [ModelKind; 4] = [ModelKind::CnnLstm, ModelKind::Lmu, ModelKind::Transformer, ModelKind::Gnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ConstantVelocity => "constant_velocity",
            ModelKind::Linear => "linear",
            ModelKind::Tcnn => "tcnn",
            ModelKind::Lstm => "lstm",
            ModelKind::CnnLstm => "cnn_lstm",
            ModelKind::Lmu => "lmu",
            ModelKind::Gnn => "gnn",
            ModelKind::Transformer => "transformer",
        }
    }

    pub fn trainable(self) -> bool {
        self != ModelKind::ConstantVelocity
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let alias = match norm.as_str() {
            "cv" => "constant_velocity",
            "cnnlstm" => "cnn_lstm",
            other => other,
        };
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::Parameter(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Velocities,
    Offsets,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmuMethod {
    Euler,
    Zoh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmuInput {
    /// `v_x, v_y` of every object (22 columns for 11 objects).
    Velocities,
    /// `pos_x, pos_y` of every object.
    Positions,
    /// Both, 4 columns per object.
    PositionsVelocities,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Last,
    Mean,
}

/// Hyperparameters for every model; unused sections are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dropout: f64,

    pub linear_hidden: usize,

    pub tcnn_filters: usize,
    pub tcnn_kernel: usize,
    pub tcnn_dilations: Vec<usize>,

    pub lstm_hidden: usize,
    pub lstm_layers: usize,

    pub cnn_channels: usize,
    /// Kernel extent over (object rows, timesteps).
    pub cnn_kernel: (usize, usize),
    pub cnn_slope: f64,
    pub cnn_field_width: usize,
    pub cnn_output: OutputKind,

    pub lmu_order: usize,
    pub lmu_theta: f64,
    pub lmu_hidden: usize,
    pub lmu_method: LmuMethod,
    /// Use the row-scaled `(2i+1)` state matrix instead of the printed one.
    pub lmu_scaled: bool,
    pub lmu_input: LmuInput,

    pub gru_hidden: usize,
    pub gat_heads: usize,
    pub gat_out: usize,
    pub gat_layers: usize,
    pub gat_slope: f64,
    pub gat_edge_distance: bool,
    pub edge_rule: EdgeRule,
    pub decoder_hidden: usize,

    pub d_model: usize,
    pub heads: usize,
    /// Per-head width; `None` means `d_model / heads`.
    pub d_k: Option<usize>,
    pub ffn_hidden: usize,
    pub blocks: usize,
    pub embed_kernel: usize,
    pub pooling: Pooling,
    pub positional_encoding: bool,
    pub layer_norm_eps: f64,

    pub landmarks: Landmarks,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Sizes as described for the full-scale models.
    pub fn paper() -> Self {
        ModelConfig {
            dropout: 0.1,
            linear_hidden: 128,
            tcnn_filters: 42,
            tcnn_kernel: 2,
            tcnn_dilations: vec![1, 2, 4, 8, 8],
            lstm_hidden: 128,
            lstm_layers: 2,
            cnn_channels: 8,
            cnn_kernel: (2, 5),
            cnn_slope: 0.1,
            cnn_field_width: 100,
            cnn_output: OutputKind::Offsets,
            lmu_order: 256,
            lmu_theta: 25.0,
            lmu_hidden: 256,
            lmu_method: LmuMethod::Zoh,
            lmu_scaled: false,
            lmu_input: LmuInput::Velocities,
            gru_hidden: 64,
            gat_heads: 4,
            gat_out: 16,
            gat_layers: 1,
            gat_slope: 0.2,
            gat_edge_distance: false,
            edge_rule: EdgeRule::FullyConnected,
            decoder_hidden: 128,
            d_model: 256,
            heads: 8,
            d_k: None,
            ffn_hidden: 1024,
            blocks: 6,
            embed_kernel: 3,
            pooling: Pooling::Last,
            positional_encoding: false,
            layer_norm_eps: 1e-5,
            landmarks: Landmarks::nba(),
        }
    }

    /// Same structure at widths a single CPU core trains in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            linear_hidden: 64,
            tcnn_filters: 24,
            lstm_hidden: 32,
            lstm_layers: 1,
            cnn_channels: 4,
            cnn_field_width: 8,
            lmu_order: 24,
            lmu_hidden: 32,
            gru_hidden: 24,
            gat_heads: 2,
            gat_out: 8,
            decoder_hidden: 32,
            d_model: 32,
            heads: 4,
            ffn_hidden: 64,
            blocks: 2,
            ..Self::paper()
        }
    }

    /// Tiny copies for finite-difference gradient checks.
    pub fn miniature() -> Self {
        ModelConfig {
            dropout: 0.0,
            linear_hidden: 6,
            tcnn_filters: 3,
            tcnn_dilations: vec![1, 2],
            lstm_hidden: 8,
            lstm_layers: 2,
            cnn_channels: 2,
            cnn_kernel: (2, 2),
            cnn_field_width: 3,
            lmu_order: 8,
            lmu_hidden: 4,
            gru_hidden: 4,
            gat_heads: 2,
            gat_out: 3,
            decoder_hidden: 4,
            d_model: 16,
            heads: 2,
            ffn_hidden: 6,
            blocks: 2,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "miniature" => Ok(Self::miniature()),
            other => Err(Error::Parameter(format!("unknown size preset {other:?}"))),
        }
    }
}

/// Window geometry a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub history: usize,
    pub forecast: usize,
    pub objects: usize,
}

pub trait Forecaster: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn output(&self) -> OutputKind;
    fn dims(&self) -> Dims;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Native output `[B × P × 2]`. Dropout is active only when `rng` is given.
    fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &[Sample],
        norm: &NormStats,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var>;
}

/// Shortest history each model accepts.
pub fn min_history(kind: ModelKind, config: &ModelConfig) -> usize {
    match kind {
        ModelKind::CnnLstm => config.cnn_kernel.1,
        ModelKind::ConstantVelocity => 1,
        _ => 1,
    }
}

pub fn build(kind: ModelKind, config: &ModelConfig, dims: Dims, seed: u64) -> Result<Box<dyn Forecaster>> {
    if dims.history < min_history(kind, config) || dims.forecast == 0 || dims.objects == 0 {
        return Err(Error::Configuration(format!(
            "{kind} cannot be built for {} history steps, {} forecast steps, {} objects",
            dims.history, dims.forecast, dims.objects
        )));
    }
    // every model draws from its own stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xA5A5_0000 + kind as u64));
    Ok(match kind {
        ModelKind::ConstantVelocity => Box::new(baseline::ConstantVelocity::new(dims)),
        ModelKind::Linear => Box::new(baseline::Linear::new(config, dims, &mut rng)?),
        ModelKind::Tcnn => Box::new(baseline::Tcnn::new(config, dims, &mut rng)?),
        ModelKind::Lstm => Box::new(recurrent::Lstm::new(config, dims, &mut rng)?),
        ModelKind::CnnLstm => Box::new(recurrent::CnnLstm::new(config, dims, &mut rng)?),
        ModelKind::Lmu => Box::new(lmu::Lmu::new(config, dims, &mut rng)?),
        ModelKind::Gnn => Box::new(graph::Fusion::new(config, dims, &mut rng)?),
        ModelKind::Transformer => Box::new(transformer::Transformer::new(config, dims, &mut rng)?),
    })
}

/// Forecast positions in meters, evaluation mode.
pub fn predict(model: &dyn Forecaster, batch: &[Sample], norm: &NormStats) -> Result<Vec<Vec<[f64; 2]>>> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, false);
    let out = model.forward(&mut tape, &p, batch, norm, None)?;
    features::decode(tape.value(out), batch, norm, model.output())
}

/// Check that a native output has the expected `[B × P × 2]` shape.
pub(crate) fn reshape_output(tape: &mut Tape, flat: Var, batch: usize, forecast: usize) -> Result<Var> {
    tape.reshape(flat, &[batch, forecast, 2])
}
