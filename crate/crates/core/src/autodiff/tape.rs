use std::collections::BTreeMap;

use super::kernels::{self, gemm, split_axis, Activation};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Tensor),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Transpose(Var),
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Tensor),
    Reshape(Var),
    Narrow {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Select {
        x: Var,
        axis: usize,
        index: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterAddRows {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentSoftmax {
        x: Var,
        seg: Vec<usize>,
    },
    MulCol(Var, Var),
    CausalConv1d {
        x: Var,
        k: Var,
        dilation: usize,
    },
    Conv2d {
        x: Var,
        k: Var,
        cols: Vec<f64>,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode recording of primitive applications.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them. Leaves created from tensors with
/// `requires_grad` receive gradients on [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.map.get(&v)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.map.iter()
    }

    /// Gradient for `v`, zeros of the leaf's shape when `v` did not influence the loss.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.map
            .get(&v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a leaf. It is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shapes(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x[..., n] + bias[n]`, broadcasting over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(bias).numel() != n {
            return Err(Error::shapes(
                "add_bias",
                self.value(x).shape(),
                self.value(bias).shape(),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone().with_grad(false);
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(v, bb)| *v += bb);
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|t| scale * t + shift);
        self.push(v, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// Elementwise product with a constant (dropout masks, fixed weights).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::shapes("mul_const", self.value(x).shape(), c.shape()));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a * b)
            .collect();
        let v = Tensor::from_vec(c.shape(), data);
        Ok(self.push(v, Op::MulConst(x, c), &[x]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · w + b` for `x[..., in]`, `w[in × out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::bmm(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Bmm(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = kernels::transpose_last2(self.value(x))?;
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let v = kernels::activation(self.value(x), kind)?;
        Ok(self.push(v, Op::Act(x, kind), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid).expect("infallible")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh).expect("infallible")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu).expect("infallible")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = kernels::softmax(self.value(x))?;
        Ok(self.push(v, Op::Softmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let v = kernels::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let (xhat, inv_std) = kernels::layer_norm_stats(self.value(x), eps);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != target.shape() {
            return Err(Error::shapes("mse", t.shape(), target.shape()));
        }
        let s = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / t.numel().max(1) as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse(x, target), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().with_grad(false).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        if start + len > n {
            return Err(Error::dim(
                "narrow",
                format!("[{start}, {}) exceeds last axis {n}", start + len),
            ));
        }
        let data: Vec<f64> = t
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::Narrow { x, start }, &[x]))
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let lead = &self.value(first).shape()[..self.value(first).rank() - 1];
        let rows: usize = lead.iter().product();
        for &x in xs {
            let s = self.value(x).shape();
            if &s[..s.len() - 1] != lead {
                return Err(Error::shapes("concat", self.value(first).shape(), s));
            }
        }
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::Concat(xs.to_vec()), xs))
    }

    /// Take `index` along `axis`, removing that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || index >= t.shape()[axis] {
            return Err(Error::dim(
                "select",
                format!("index {index} on axis {axis} of {:?}", t.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * dim + index) * inner;
            data.extend_from_slice(&t.data()[base..base + inner]);
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::Select { x, axis, index }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || t.shape()[axis] == 0 {
            return Err(Error::dim("mean_axis", format!("axis {axis} of {:?}", t.shape())));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    data[o * inner + i] += t.data()[base + i] / dim as f64;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::MeanAxis { x, axis }, &[x]))
    }

    fn rows_of(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match *self.value(x).shape() {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::dim(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    /// `out[e] = x[idx[e]]` on rows of a matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.rows_of("gather_rows", x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let v = Tensor::from_vec(&[idx.len(), c], data);
        Ok(self.push(
            v,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// `out[idx[e]] += x[e]` into a `[rows × C]` zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let (e, c) = self.rows_of("scatter_add_rows", x)?;
        if e != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::dim(
                "scatter_add_rows",
                format!("{e} rows vs {} indices into {rows}", idx.len()),
            ));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; rows * c];
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..c {
                data[i * c + j] += src[k * c + j];
            }
        }
        let v = Tensor::from_vec(&[rows, c], data);
        Ok(self.push(
            v,
            Op::ScatterAddRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Softmax of a flat score vector within groups given by `seg` (one id per entry).
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize], groups: usize) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != seg.len() || seg.iter().any(|&s| s >= groups) {
            return Err(Error::dim(
                "segment_softmax",
                format!("{} scores vs {} segment ids", t.numel(), seg.len()),
            ));
        }
        let mut max = vec![f64::NEG_INFINITY; groups];
        for (&v, &s) in t.data().iter().zip(seg) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = t
            .data()
            .iter()
            .zip(seg)
            .map(|(&v, &s)| (v - max[s]).exp())
            .collect();
        let mut sum = vec![0.0; groups];
        for (&v, &s) in out.iter().zip(seg) {
            sum[s] += v;
        }
        for (v, &s) in out.iter_mut().zip(seg) {
            *v /= sum[s];
        }
        let v = Tensor::from_vec(t.shape(), out);
        Ok(self.push(
            v,
            Op::SegmentSoftmax {
                x,
                seg: seg.to_vec(),
            },
            &[x],
        ))
    }

    /// Scale row `e` of `x[E×C]` by `w[e]`.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (e, c) = self.rows_of("mul_col", x)?;
        if self.value(w).numel() != e {
            return Err(Error::shapes("mul_col", self.value(x).shape(), self.value(w).shape()));
        }
        let wd = self.value(w).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .zip(wd)
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        let v = Tensor::from_vec(&[e, c], data);
        Ok(self.push(v, Op::MulCol(x, w), &[x, w]))
    }

    pub fn causal_conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let v = kernels::causal_conv1d(self.value(x), self.value(kernel), dilation)?;
        Ok(self.push(
            v,
            Op::CausalConv1d {
                x,
                k: kernel,
                dilation,
            },
            &[x, kernel],
        ))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let g = kernels::conv2d_geom(self.value(x), self.value(kernel))?;
        let v = kernels::conv2d(self.value(x), self.value(kernel))?;
        let cols = kernels::im2col(self.value(x).data(), &g);
        Ok(self.push(v, Op::Conv2d { x, k: kernel, cols }, &[x, kernel]))
    }

    /// Weight normalization `w[..., o] = g[o] · v[..., o] / ‖v[..., o]‖`, the
    /// norm taken over every axis except the last.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let vt = self.value(v);
        let cout = vt.last_dim();
        if self.value(g).numel() != cout {
            return Err(Error::shapes("weight_norm", vt.shape(), self.value(g).shape()));
        }
        let mut norms = vec![0.0; cout];
        for row in vt.data().chunks(cout) {
            for (n, x) in norms.iter_mut().zip(row) {
                *n += x * x;
            }
        }
        norms.iter_mut().for_each(|n| *n = n.sqrt().max(1e-12));
        let gd = self.value(g).data();
        let data = vt
            .data()
            .chunks(cout)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(o, x)| gd[o] * x / norms[o])
                    .collect::<Vec<_>>()
            })
            .collect();
        let out = Tensor::from_vec(vt.shape(), data);
        Ok(self.push(out, Op::WeightNorm { v, g, norms }, &[v, g]))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = BTreeMap::new();
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                out.insert(Var(id), Tensor::from_vec(node.value.shape(), g));
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { map: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    let ga = acc(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if self.wants(*b) {
                    let gb = acc(&mut grads[b.0], g.len());
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(a, b), (b, a)] {
                    if self.wants(*this) {
                        let od = val(*other).data();
                        let gt = acc(&mut grads[this.0], g.len());
                        for i in 0..g.len() {
                            gt[i] += g[i] * od[i];
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
                if self.wants(*b) {
                    let n = val(*b).numel();
                    let gb = acc(&mut grads[b.0], n);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Affine(x, s) => {
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += s * q);
                }
            }
            Op::MulConst(x, c) => {
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * c.data()[i];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let k = ta.last_dim();
                let m = ta.numel() / k.max(1);
                let n = tb.shape()[1];
                if self.wants(*a) {
                    // ga (m×k) += g (m×n) · bᵀ
                    let ga = acc(&mut grads[a.0], m * k);
                    gemm(m, n, k, g, n as isize, 1, tb.data(), 1, n as isize, ga, 1.0);
                }
                if self.wants(*b) {
                    // gb (k×n) += aᵀ · g
                    let gb = acc(&mut grads[b.0], k * n);
                    gemm(k, m, n, ta.data(), 1, k as isize, g, n as isize, 1, gb, 1.0);
                }
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                if self.wants(*a) {
                    let ga = acc(&mut grads[a.0], bs * m * k);
                    for i in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            n as isize,
                            1,
                            &tb.data()[i * k * n..],
                            1,
                            n as isize,
                            &mut ga[i * m * k..],
                            1.0,
                        );
                    }
                }
                if self.wants(*b) {
                    let gb = acc(&mut grads[b.0], bs * k * n);
                    for i in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &ta.data()[i * m * k..],
                            1,
                            k as isize,
                            &g[i * m * n..],
                            n as isize,
                            1,
                            &mut gb[i * k * n..],
                            1.0,
                        );
                    }
                }
            }
            Op::Transpose(x) => {
                if self.wants(*x) {
                    let s = node.value.shape();
                    let gt = kernels::transpose_last2(&Tensor::from_vec(s, g.to_vec()))
                        .expect("transpose of recorded shape");
                    let gx = acc(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(gt.data()).for_each(|(p, q)| *p += q);
                }
            }
            Op::Act(x, kind) => {
                if self.wants(*x) {
                    let xd = val(*x).data();
                    let yd = node.value.data();
                    let gx = acc(&mut grads[x.0], g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * kind.derivative(xd[i], yd[i]);
                    }
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let n = node.value.last_dim();
                    let gx = acc(&mut grads[x.0], g.len());
                    for ((gr, yr), xr) in g
                        .chunks(n)
                        .zip(node.value.data().chunks(n))
                        .zip(gx.chunks_mut(n))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            xr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gd = val(*gain).data();
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], g.len());
                    for (r, (gr, xr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let gh: Vec<f64> = gr.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let s1: f64 = gh.iter().sum();
                        let s2: f64 = gh.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let is = inv_std[r];
                        for j in 0..d {
                            gx[r * d + j] +=
                                is / d as f64 * (d as f64 * gh[j] - s1 - xr[j] * s2);
                        }
                    }
                }
                if self.wants(*gain) {
                    let gg = acc(&mut grads[gain.0], d);
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = acc(&mut grads[bias.0], d);
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if self.wants(*x) {
                    let n = val(*x).numel();
                    let s = if matches!(node.op, Op::Mean(_)) {
                        g[0] / n.max(1) as f64
                    } else {
                        g[0]
                    };
                    let gx = acc(&mut grads[x.0], n);
                    gx.iter_mut().for_each(|p| *p += s);
                }
            }
            Op::Mse(x, target) => {
                if self.wants(*x) {
                    let xd = val(*x).data();
                    let n = xd.len();
                    let s = 2.0 * g[0] / n.max(1) as f64;
                    let gx = acc(&mut grads[x.0], n);
                    for i in 0..n {
                        gx[i] += s * (xd[i] - target.data()[i]);
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
            }
            Op::Narrow { x, start } => {
                if self.wants(*x) {
                    let n = val(*x).last_dim();
                    let len = node.value.last_dim();
                    let gx = acc(&mut grads[x.0], val(*x).numel());
                    for (r, gr) in g.chunks(len).enumerate() {
                        for j in 0..len {
                            gx[r * n + start + j] += gr[j];
                        }
                    }
                }
            }
            Op::Concat(xs) => {
                let total = node.value.last_dim();
                let rows = node.value.numel() / total.max(1);
                let mut off = 0;
                for x in xs {
                    let w = val(*x).last_dim();
                    if self.wants(*x) {
                        let gx = acc(&mut grads[x.0], rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                gx[r * w + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Select { x, axis, index } => {
                if self.wants(*x) {
                    let (outer, dim, inner) = split_axis(val(*x).shape(), *axis);
                    let gx = acc(&mut grads[x.0], outer * dim * inner);
                    for o in 0..outer {
                        let base = (o * dim + index) * inner;
                        for i in 0..inner {
                            gx[base + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                if self.wants(*x) {
                    let (outer, dim, inner) = split_axis(val(*x).shape(), *axis);
                    let gx = acc(&mut grads[x.0], outer * dim * inner);
                    for o in 0..outer {
                        for d in 0..dim {
                            let base = (o * dim + d) * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i] / dim as f64;
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if self.wants(*x) {
                    let c = node.value.last_dim();
                    let gx = acc(&mut grads[x.0], val(*x).numel());
                    for (e, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += g[e * c + j];
                        }
                    }
                }
            }
            Op::ScatterAddRows { x, idx } => {
                if self.wants(*x) {
                    let c = node.value.last_dim();
                    let gx = acc(&mut grads[x.0], idx.len() * c);
                    for (e, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[e * c + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, seg } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let groups = seg.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; groups];
                    for i in 0..y.len() {
                        dot[seg[i]] += g[i] * y[i];
                    }
                    let gx = acc(&mut grads[x.0], y.len());
                    for i in 0..y.len() {
                        gx[i] += y[i] * (g[i] - dot[seg[i]]);
                    }
                }
            }
            Op::MulCol(x, w) => {
                let c = node.value.last_dim();
                let (xd, wd) = (val(*x).data(), val(*w).data());
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], xd.len());
                    for (e, &s) in wd.iter().enumerate() {
                        for j in 0..c {
                            gx[e * c + j] += g[e * c + j] * s;
                        }
                    }
                }
                if self.wants(*w) {
                    let gw = acc(&mut grads[w.0], wd.len());
                    for e in 0..wd.len() {
                        gw[e] += (0..c).map(|j| g[e * c + j] * xd[e * c + j]).sum::<f64>();
                    }
                }
            }
            Op::CausalConv1d { x, k, dilation } => {
                let (tx, tk) = (val(*x), val(*k));
                let (b, t, cin) = match *tx.shape() {
                    [t, c] => (1, t, c),
                    [b, t, c] => (b, t, c),
                    _ => unreachable!(),
                };
                let (kk, cout) = (tk.shape()[0], tk.shape()[2]);
                let want_x = self.wants(*x);
                let want_k = self.wants(*k);
                let mut gx = want_x.then(|| grads[x.0].take().unwrap_or_else(|| vec![0.0; tx.numel()]));
                let mut gk = want_k.then(|| grads[k.0].take().unwrap_or_else(|| vec![0.0; tk.numel()]));
                for j in 0..kk {
                    let shift = (kk - 1 - j) * dilation;
                    if shift >= t {
                        continue;
                    }
                    let rows = t - shift;
                    let kj = &tk.data()[j * cin * cout..(j + 1) * cin * cout];
                    for bi in 0..b {
                        let gs = &g[(bi * t + shift) * cout..];
                        if let Some(gx) = gx.as_mut() {
                            // gx[rows×cin] += g[rows×cout] · kjᵀ
                            gemm(
                                rows,
                                cout,
                                cin,
                                gs,
                                cout as isize,
                                1,
                                kj,
                                1,
                                cout as isize,
                                &mut gx[bi * t * cin..],
                                1.0,
                            );
                        }
                        if let Some(gk) = gk.as_mut() {
                            // gk_j[cin×cout] += xᵀ[cin×rows] · g[rows×cout]
                            gemm(
                                cin,
                                rows,
                                cout,
                                &tx.data()[bi * t * cin..],
                                1,
                                cin as isize,
                                gs,
                                cout as isize,
                                1,
                                &mut gk[j * cin * cout..],
                                1.0,
                            );
                        }
                    }
                }
                if let Some(gx) = gx {
                    grads[x.0] = Some(gx);
                }
                if let Some(gk) = gk {
                    grads[k.0] = Some(gk);
                }
            }
            Op::Conv2d { x, k, cols } => {
                let geom = kernels::conv2d_geom(val(*x), val(*k)).expect("recorded geometry");
                let grows = kernels::channels_to_rows(g, &geom);
                let rows = geom.b * geom.oh * geom.ow;
                let ncols = geom.cin * geom.kh * geom.kw;
                if self.wants(*k) {
                    // gk [cout × ncols] += growsᵀ [cout × rows] · cols [rows × ncols]
                    let gk = acc(&mut grads[k.0], geom.cout * ncols);
                    gemm(
                        geom.cout,
                        rows,
                        ncols,
                        &grows,
                        1,
                        geom.cout as isize,
                        cols,
                        ncols as isize,
                        1,
                        gk,
                        1.0,
                    );
                }
                if self.wants(*x) {
                    // gcols [rows × ncols] = grows [rows × cout] · k [cout × ncols]
                    let mut gcols = vec![0.0; rows * ncols];
                    gemm(
                        rows,
                        geom.cout,
                        ncols,
                        &grows,
                        geom.cout as isize,
                        1,
                        val(*k).data(),
                        ncols as isize,
                        1,
                        &mut gcols,
                        0.0,
                    );
                    let gx = acc(&mut grads[x.0], val(*x).numel());
                    kernels::col2im_add(&gcols, &geom, gx);
                }
            }
            Op::WeightNorm { v, g: gain, norms } => {
                let vd = val(*v).data();
                let gd = val(*gain).data();
                let cout = norms.len();
                // per output channel: dot(g_w, v)
                let mut dots = vec![0.0; cout];
                for (gr, vr) in g.chunks(cout).zip(vd.chunks(cout)) {
                    for o in 0..cout {
                        dots[o] += gr[o] * vr[o];
                    }
                }
                if self.wants(*gain) {
                    let gg = acc(&mut grads[gain.0], cout);
                    for o in 0..cout {
                        gg[o] += dots[o] / norms[o];
                    }
                }
                if self.wants(*v) {
                    let gv = acc(&mut grads[v.0], vd.len());
                    for (i, (&gw, &x)) in g.iter().zip(vd).enumerate() {
                        let o = i % cout;
                        let n = norms[o];
                        gv[i] += gd[o] / n * (gw - dots[o] * x / (n * n));
                    }
                }
            }
        }
    }
}
