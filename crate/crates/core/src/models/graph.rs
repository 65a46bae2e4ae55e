//! Graph attention, the GRU history encoder and the RNN-GAT-RNN fusion model.

use rand_chacha::ChaCha8Rng;

use super::features::{node_tracks, object_order, Sample};
use super::layers::{Dense, GruLayer, LstmLayer};
use super::{Dims, Forecaster, ModelConfig, ModelKind, OutputKind};
use crate::autodiff::{Tape, Var};
use crate::data::graph::{edges_for, team_slots, EdgeRule, TEAM_ENCODING_WIDTH};
use crate::data::normalize::NormStats;
use crate::data::series::{POS_X, POS_Y, VEL_X, VEL_Y};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Edge list over `rows` nodes; `(i, j)` puts `j` in the neighbourhood of `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edges {
    pub pairs: Vec<(usize, usize)>,
    /// Per-edge distance in meters, used when the layer attends over it.
    pub distance: Vec<f64>,
    pub rows: usize,
}

impl Edges {
    pub fn new(pairs: Vec<(usize, usize)>, distance: Vec<f64>, rows: usize) -> Result<Self> {
        if pairs.iter().any(|&(i, j)| i >= rows || j >= rows) || distance.len() != pairs.len() {
            return Err(Error::dim("edges", format!("{} edges over {rows} nodes", pairs.len())));
        }
        let mut degree = vec![0usize; rows];
        for &(i, _) in &pairs {
            degree[i] += 1;
        }
        if let Some(node) = degree.iter().position(|&d| d == 0) {
            return Err(Error::Configuration(format!("node {node} has no neighbours")));
        }
        Ok(Edges { pairs, distance, rows })
    }

    fn src(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    fn dst(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// One attention head: projection `W`, attention vector split as
/// `a = [a_self; a_neigh]`, and an optional weight on edge distance.
#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: ParamId,
    pub a_self: ParamId,
    pub a_neigh: ParamId,
    pub a_dist: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub input: usize,
    pub output: usize,
    pub slope: f64,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        heads: usize,
        slope: f64,
        use_distance: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Configuration("gat needs at least one head".into()));
        }
        let heads = (0..heads)
            .map(|k| GatHead {
                w: store.weight(format!("{name}.h{k}.w"), &[input, output], input, rng),
                a_self: store.weight(format!("{name}.h{k}.a_self"), &[output, 1], 2 * output, rng),
                a_neigh: store.weight(format!("{name}.h{k}.a_neigh"), &[output, 1], 2 * output, rng),
                a_dist: use_distance.then(|| store.zeros(format!("{name}.h{k}.a_dist"), &[1, 1])),
            })
            .collect();
        Ok(GatLayer {
            heads,
            input,
            output,
            slope,
        })
    }

    pub fn width(&self) -> usize {
        self.heads.len() * self.output
    }
}

/// `α_ij = softmax_j∈N(i) leakyReLU(aᵀ[W h_i ⊕ W h_j])`, one value per edge.
/// Returns `(α [E], W h [R × F_out])`.
pub fn gat_attention(
    tape: &mut Tape,
    p: &Bound,
    head: &GatHead,
    slope: f64,
    h: Var,
    edges: &Edges,
) -> Result<(Var, Var)> {
    let wh = tape.matmul(h, p[head.w])?;
    let s_self = tape.matmul(wh, p[head.a_self])?;
    let s_neigh = tape.matmul(wh, p[head.a_neigh])?;
    let (src, dst) = (edges.src(), edges.dst());
    let ei = tape.gather_rows(s_self, &src)?;
    let ej = tape.gather_rows(s_neigh, &dst)?;
    let mut e = tape.add(ei, ej)?;
    if let Some(a) = head.a_dist {
        let d = tape.constant(Tensor::from_vec(&[edges.pairs.len(), 1], edges.distance.clone()));
        let de = tape.matmul(d, p[a])?;
        e = tape.add(e, de)?;
    }
    let e = tape.leaky_relu(e, slope)?;
    let e = tape.reshape(e, &[edges.pairs.len()])?;
    let alpha = tape.segment_softmax(e, &src, edges.rows)?;
    Ok((alpha, wh))
}

/// `h'_i = ReLU(Σ_j α_ij W h_j)`.
pub fn gat_aggregate(tape: &mut Tape, wh: Var, alpha: Var, edges: &Edges) -> Result<Var> {
    let msgs = tape.gather_rows(wh, &edges.dst())?;
    let weighted = tape.mul_col(msgs, alpha)?;
    let agg = tape.scatter_add_rows(weighted, &edges.src(), edges.rows)?;
    Ok(tape.relu(agg))
}

/// Every head's attention and aggregation, concatenated to `[R × K·F_out]`.
pub fn gat_multihead(tape: &mut Tape, p: &Bound, layer: &GatLayer, h: Var, edges: &Edges) -> Result<Var> {
    let mut outs = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let (alpha, wh) = gat_attention(tape, p, head, layer.slope, h, edges)?;
        outs.push(gat_aggregate(tape, wh, alpha, edges)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat(&outs)
    }
}

/// Decoder recurrence state; lets a rollout stop and resume.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub y_prev: Var,
}

/// GRU history encoder → GAT interaction encoder → LSTM decoder.
pub struct Fusion {
    dims: Dims,
    params: ParamStore,
    pub gru: GruLayer,
    pub gat: Vec<GatLayer>,
    pub init: Dense,
    pub decoder: LstmLayer,
    pub out: Dense,
    pub residual: ParamId,
    pub edge_rule: EdgeRule,
}

/// Per-node static features: normalized last pos/vel and the team one-hot.
pub const NODE_STATE: usize = 4;

impl Fusion {
    pub fn new(config: &ModelConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let g = config.gru_hidden;
        let gru = GruLayer::new(&mut params, "gnn.gru", 4, g, rng);
        let mut gat = Vec::new();
        let mut width = g + NODE_STATE + TEAM_ENCODING_WIDTH;
        for l in 0..config.gat_layers.max(1) {
            let layer = GatLayer::new(
                &mut params,
                &format!("gnn.gat{l}"),
                width,
                config.gat_out,
                config.gat_heads,
                config.gat_slope,
                config.gat_edge_distance,
                rng,
            )?;
            width = layer.width();
            gat.push(layer);
        }
        let ctx = g + width;
        let d = config.decoder_hidden;
        let init = Dense::new(&mut params, "gnn.init", ctx, d, true, rng);
        let decoder = LstmLayer::new(&mut params, "gnn.decoder", ctx + 2, d, rng);
        let out = Dense::new(&mut params, "gnn.out", d, 2, true, rng);
        let residual = params.weight("gnn.residual", &[NODE_STATE, 2], NODE_STATE, rng);
        if let EdgeRule::Knn { k } = config.edge_rule {
            if k == 0 || k >= dims.objects {
                return Err(Error::Parameter(format!("knn needs 0 < k < N, got k={k}, N={}", dims.objects)));
            }
        }
        Ok(Fusion {
            dims,
            params,
            gru,
            gat,
            init,
            decoder,
            out,
            residual,
            edge_rule: config.edge_rule,
        })
    }

    /// GRU codes `r [R × hidden]` from tracks `[R × H × 4]`.
    pub fn history_encode(&self, tape: &mut Tape, p: &Bound, tracks: Var) -> Result<Var> {
        self.gru.encode(tape, p, tracks)
    }

    /// GAT stack over `[r ⊕ node features]`.
    pub fn interaction_encode(&self, tape: &mut Tape, p: &Bound, r: Var, nodes: Var, edges: &Edges) -> Result<Var> {
        let mut h = tape.concat(&[r, nodes])?;
        for layer in &self.gat {
            h = gat_multihead(tape, p, layer, h, edges)?;
        }
        Ok(h)
    }

    /// Initial decoder state from the target's `[g ⊕ r]` context `[B × ctx]`.
    pub fn decoder_start(&self, tape: &mut Tape, p: &Bound, ctx: Var) -> Result<DecoderState> {
        let b = tape.value(ctx).shape()[0];
        let h0 = self.init.forward(tape, p, ctx)?;
        let h = tape.tanh(h0);
        let c = tape.constant(Tensor::zeros(&[b, self.decoder.hidden]));
        let y_prev = tape.constant(Tensor::zeros(&[b, 2]));
        Ok(DecoderState { h, c, y_prev })
    }

    /// Decode `steps` positions, each fed back as the next input. The
    /// residual adds a projection of the target's last state `[B × 4]` to
    /// every step.
    pub fn fusion_decode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: Var,
        target_state: Var,
        mut state: DecoderState,
        steps: usize,
    ) -> Result<(Vec<Var>, DecoderState)> {
        let res = tape.matmul(target_state, p[self.residual])?;
        let mut ys = Vec::with_capacity(steps);
        for _ in 0..steps {
            let x = tape.concat(&[ctx, state.y_prev])?;
            let (h, c) = self.decoder.step(tape, p, x, state.h, state.c)?;
            let y = self.out.forward(tape, p, h)?;
            let y = tape.add(y, res)?;
            ys.push(y);
            state = DecoderState { h, c, y_prev: y };
        }
        Ok((ys, state))
    }

    /// Batched graph: node features `[B·N × 7]` and edges offset per sample.
    pub fn scene(&self, batch: &[Sample], norm: &NormStats) -> Result<(Tensor, Edges)> {
        let n = self.dims.objects;
        let width = NODE_STATE + TEAM_ENCODING_WIDTH;
        let mut data = Vec::with_capacity(batch.len() * n * width);
        let mut pairs = Vec::new();
        let mut dist = Vec::new();
        for (b, s) in batch.iter().enumerate() {
            let w = s.window;
            let order = object_order(n, s.target);
            let last = w.history_steps() - 1;
            let teams: Vec<i64> = order.iter().map(|&o| w.team_ids[o]).collect();
            let slots = team_slots(&teams);
            let positions: Vec<[f64; 2]> = order.iter().map(|&o| w.last_position(o)).collect();
            for (row, &o) in order.iter().enumerate() {
                for ch in [POS_X, POS_Y, VEL_X, VEL_Y] {
                    data.push(norm.apply_value(ch, w.hist(last, o, ch)));
                }
                let mut onehot = [0.0; TEAM_ENCODING_WIDTH];
                onehot[slots[row]] = 1.0;
                data.extend_from_slice(&onehot);
            }
            for (i, j) in edges_for(&positions, self.edge_rule)? {
                pairs.push((b * n + i, b * n + j));
                dist.push((positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]));
            }
        }
        let nodes = Tensor::from_vec(&[batch.len() * n, width], data);
        Ok((nodes, Edges::new(pairs, dist, batch.len() * n)?))
    }
}

impl Forecaster for Fusion {
    fn kind(&self) -> ModelKind {
        ModelKind::Gnn
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
        let n = self.dims.objects;
        let tracks = tape.constant(node_tracks(batch, norm)?);
        let (nodes_t, edges) = self.scene(batch, norm)?;
        let nodes = tape.constant(nodes_t);
        let r = self.history_encode(tape, p, tracks)?;
        let g = self.interaction_encode(tape, p, r, nodes, &edges)?;
        let targets: Vec<usize> = (0..batch.len()).map(|b| b * n).collect();
        let gt = tape.gather_rows(g, &targets)?;
        let rt = tape.gather_rows(r, &targets)?;
        let ctx = tape.concat(&[gt, rt])?;
        let st = tape.gather_rows(nodes, &targets)?;
        let st = tape.narrow(st, 0, NODE_STATE)?;
        let start = self.decoder_start(tape, p, ctx)?;
        let (ys, _) = self.fusion_decode(tape, p, ctx, st, start, self.dims.forecast)?;
        let joined = tape.concat(&ys)?;
        tape.reshape(joined, &[batch.len(), self.dims.forecast, 2])
    }
}
