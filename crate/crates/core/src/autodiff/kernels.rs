//! Forward kernels on plain tensors. The tape records these and pairs each
//! with its adjoint; they are also usable directly for inference.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c (m×n) = beta·c + a (m×k) · b (k×n)` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // SAFETY: callers pass slices that cover the strided extents; the output
    // is a dense row-major m×n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product. `a` may carry leading batch axes which are flattened into rows.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || b.rank() != 2 || a.last_dim() != b.shape()[0] {
        return Err(Error::shapes("matmul", a.shape(), b.shape()));
    }
    let k = a.last_dim();
    let m = a.numel() / k.max(1);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, &mut out, 0.0);
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_vec(&shape, out))
}

/// Batched product `[B×m×k] · [B×k×n]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
        return Err(Error::shapes("bmm", sa, sb));
    }
    let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let mut out = vec![0.0; bs * m * n];
    for i in 0..bs {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..],
            k as isize,
            1,
            &b.data()[i * k * n..],
            n as isize,
            1,
            &mut out[i * m * n..],
            0.0,
        );
    }
    Ok(Tensor::from_vec(&[bs, m, n], out))
}

pub fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::dim("transpose", format!("rank {} < 2", s.len())));
    }
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = x.numel() / (r * c).max(1);
    let mut out = vec![0.0; x.numel()];
    let d = x.data();
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = d[base + i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let l = shape.len();
    shape.swap(l - 2, l - 1);
    Ok(Tensor::from_vec(&shape, out))
}

/// Numerically stable softmax along the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let n = x.last_dim();
    if n == 0 || x.rank() == 0 {
        return Err(Error::dim("softmax", "empty reduction axis"));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(Tensor::from_vec(x.shape(), out))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Normalized values and per-row inverse standard deviations.
pub(crate) fn layer_norm_stats(x: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let d = x.last_dim();
    let mut xhat = x.data().to_vec();
    let mut inv_std = Vec::with_capacity(x.numel() / d);
    for row in xhat.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    (xhat, inv_std)
}

/// Layer normalization over the last axis followed by an elementwise affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if d == 0 || gain.numel() != d || bias.numel() != d {
        return Err(Error::dim(
            "layer_norm",
            format!(
                "input {:?}, gain {:?}, bias {:?}",
                x.shape(),
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    let (mut y, _) = layer_norm_stats(x, eps);
    for row in y.chunks_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * g + b;
        }
    }
    Ok(Tensor::from_vec(x.shape(), y))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn validate(self) -> Result<Self> {
        match self {
            Activation::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => Err(Error::Parameter(format!(
                "leaky_relu slope must lie in (0,1), got {s}"
            ))),
            a => Ok(a),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => {
                if let Some(slope) = other
                    .strip_prefix("leaky_relu(")
                    .and_then(|s| s.strip_suffix(')'))
                {
                    let slope = slope
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad slope in {other:?}")))?;
                    Activation::LeakyRelu(slope).validate()
                } else {
                    Err(Error::Parameter(format!("unknown activation {other:?}")))
                }
            }
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    let kind = kind.validate()?;
    Ok(x.map(|v| kind.apply(v)))
}

/// View a rank-2 `[T×C]` input as a single batch.
fn as_batched_seq(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::dim(
            "causal_conv1d",
            format!("expected [T×C] or [B×T×C], got {:?}", x.shape()),
        )),
    }
}

/// Causal dilated convolution. `out[t] = Σ_j k[j] · x[t − (K−1−j)·dilation]`,
/// with zeros left of the sequence start; output length equals input length.
pub fn causal_conv1d(x: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    if dilation == 0 {
        return Err(Error::Parameter("dilation must be positive".into()));
    }
    let (b, t, cin) = as_batched_seq(x)?;
    if kernel.rank() != 3 || kernel.shape()[1] != cin {
        return Err(Error::shapes("causal_conv1d", x.shape(), kernel.shape()));
    }
    let (k, cout) = (kernel.shape()[0], kernel.shape()[2]);
    let mut out = vec![0.0; b * t * cout];
    for j in 0..k {
        let shift = (k - 1 - j) * dilation;
        if shift >= t {
            continue;
        }
        let rows = t - shift;
        let kj = &kernel.data()[j * cin * cout..(j + 1) * cin * cout];
        for bi in 0..b {
            let xs = &x.data()[bi * t * cin..];
            let os = &mut out[(bi * t + shift) * cout..];
            gemm(rows, cin, cout, xs, cin as isize, 1, kj, cout as isize, 1, os, 1.0);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Ok(Tensor::from_vec(&shape, out))
}

pub(crate) struct Conv2dGeom {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv2d_geom(x: &Tensor, kernel: &Tensor) -> Result<Conv2dGeom> {
    let (b, cin, h, w) = match *x.shape() {
        [c, h, w] => (1, c, h, w),
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(Error::shapes("conv2d", x.shape(), kernel.shape())),
    };
    let &[cout, kcin, kh, kw] = kernel.shape() else {
        return Err(Error::shapes("conv2d", x.shape(), kernel.shape()));
    };
    if kcin != cin || kh > h || kw > w || kh == 0 || kw == 0 {
        return Err(Error::dim(
            "conv2d",
            format!(
                "kernel {:?} does not fit input {:?}",
                kernel.shape(),
                x.shape()
            ),
        ));
    }
    Ok(Conv2dGeom {
        b,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh: h - kh + 1,
        ow: w - kw + 1,
    })
}

/// im2col: rows are (batch, out_y, out_x), columns are (cin, ky, kx).
pub(crate) fn im2col(x: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let cols = g.cin * g.kh * g.kw;
    let mut out = vec![0.0; g.b * g.oh * g.ow * cols];
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * cols;
                let mut col = 0;
                for c in 0..g.cin {
                    for ky in 0..g.kh {
                        let src = ((b * g.cin + c) * g.h + oy + ky) * g.w + ox;
                        out[row + col..row + col + g.kw].copy_from_slice(&x[src..src + g.kw]);
                        col += g.kw;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn col2im_add(cols: &[f64], g: &Conv2dGeom, dx: &mut [f64]) {
    let ncols = g.cin * g.kh * g.kw;
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * ncols;
                let mut col = 0;
                for c in 0..g.cin {
                    for ky in 0..g.kh {
                        let dst = ((b * g.cin + c) * g.h + oy + ky) * g.w + ox;
                        for kx in 0..g.kw {
                            dx[dst + kx] += cols[row + col + kx];
                        }
                        col += g.kw;
                    }
                }
            }
        }
    }
}

/// Valid (unpadded) 2-D convolution, `[B×Cin×H×W] ⊛ [Cout×Cin×kh×kw]`.
pub fn conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let g = conv2d_geom(x, kernel)?;
    let cols = im2col(x.data(), &g);
    let rows = g.b * g.oh * g.ow;
    let ncols = g.cin * g.kh * g.kw;
    // [rows × cout] = cols · kernelᵀ
    let mut tmp = vec![0.0; rows * g.cout];
    gemm(
        rows,
        ncols,
        g.cout,
        &cols,
        ncols as isize,
        1,
        kernel.data(),
        1,
        ncols as isize,
        &mut tmp,
        0.0,
    );
    let out = rows_to_channels(&tmp, &g);
    let shape = if x.rank() == 3 {
        vec![g.cout, g.oh, g.ow]
    } else {
        vec![g.b, g.cout, g.oh, g.ow]
    };
    Ok(Tensor::from_vec(&shape, out))
}

pub(crate) fn rows_to_channels(tmp: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let hw = g.oh * g.ow;
    let mut out = vec![0.0; g.b * g.cout * hw];
    for b in 0..g.b {
        for p in 0..hw {
            for o in 0..g.cout {
                out[(b * g.cout + o) * hw + p] = tmp[(b * hw + p) * g.cout + o];
            }
        }
    }
    out
}

pub(crate) fn channels_to_rows(out: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let hw = g.oh * g.ow;
    let mut tmp = vec![0.0; g.b * g.cout * hw];
    for b in 0..g.b {
        for p in 0..hw {
            for o in 0..g.cout {
                tmp[(b * hw + p) * g.cout + o] = out[(b * g.cout + o) * hw + p];
            }
        }
    }
    tmp
}

/// Split a shape around `axis` into (outer, dim, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
