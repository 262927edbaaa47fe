//! Forward and backward kernels for every operation the tape records.
//!
//! Each kernel is a pure function of its input tensors so the tape can be
//! replayed, and each backward returns one optional gradient per input.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output extent is `ceil(n / stride)`. Odd totals put
    /// the extra zero on the high-index side.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Swish,
    Gelu,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Swish => v * sigmoid(v),
            Activation::Gelu => 0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(v);
                s + v * s * (1.0 - s)
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + v * pdf
            }
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
        }
    }
}

/// Logistic function, split by sign so neither branch overflows.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    /// Inputs: x, kernel. `one_d` selects the `[C, kT]` kernel layout.
    DepthwiseConv { stride: (usize, usize), padding: Padding, one_d: bool },
    /// Inputs: x `[N, Cin, H, W]`, weight `[Cout, Cin, kH, kW]`, optional bias.
    Conv2d { padding: Padding },
    /// Inputs: x `[N, Cin, ...]`, weight `[Cout, Cin]`, optional bias.
    Pointwise,
    /// Inputs: x `[..., Din]`, weight `[Dout, Din]`, bias `[Dout]`.
    Linear,
    /// Inputs: x `[N, C, ...]`, gamma, beta.
    BatchNorm { eps: f64, running: Option<(Vec<f64>, Vec<f64>)> },
    Activation(Activation),
    MeanLast,
    Add,
    Mul,
    Scale(f64),
    SumAll,
    /// Inputs: x, w where `w.dims` is a prefix of `x.dims`.
    MulPrefix,
    Reshape(Vec<usize>),
    SwapLast2,
    SoftmaxXent { targets: Tensor },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::DepthwiseConv { one_d: true, .. } => "depthwise_conv1d",
            Op::DepthwiseConv { .. } => "depthwise_conv2d",
            Op::Conv2d { .. } => "conv2d",
            Op::Pointwise => "pointwise_conv",
            Op::Linear => "linear",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Activation(_) => "activation",
            Op::MeanLast => "mean_last",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::SumAll => "sum",
            Op::MulPrefix => "mul_prefix",
            Op::Reshape(_) => "reshape",
            Op::SwapLast2 => "swap_last2",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
        }
    }
}

/// Intermediates kept from the forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) enum Saved {
    #[default]
    None,
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Probs(Vec<f64>),
}

pub(crate) struct Forward {
    pub value: Tensor,
    pub saved: Saved,
    pub macs: u64,
}

fn plain(value: Tensor, macs: u64) -> Result<Forward> {
    Ok(Forward { value, saved: Saved::None, macs })
}

/// Output extent and low-side padding along one axis.
fn axis_geometry(n: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    if k == 0 {
        return Err(Error::shape("kernel extent must be positive"));
    }
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > n {
                return Err(Error::shape(format!("kernel extent {k} exceeds input extent {n}")));
            }
            Ok(((n - k) / stride + 1, 0))
        }
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

/// Maps a depthwise input onto an `(N, C, H, W)` view and returns the
/// output dims in the caller's layout.
fn depthwise_geom(
    x: &Tensor,
    k: &Tensor,
    stride: (usize, usize),
    padding: Padding,
    one_d: bool,
) -> Result<(ConvGeom, Vec<usize>)> {
    let xd = x.dims();
    let kd = k.dims();
    let (n, c, h, w) = match (one_d, xd.len()) {
        (true, 2) => (1, xd[0], 1, xd[1]),
        (true, 3) => (xd[0], xd[1], 1, xd[2]),
        (true, 4) => (xd[0], xd[1], xd[2], xd[3]),
        (false, 3) => (1, xd[0], xd[1], xd[2]),
        (false, 4) => (xd[0], xd[1], xd[2], xd[3]),
        _ => return Err(Error::shape(format!("unsupported depthwise input dims {xd:?}"))),
    };
    let (kc, kh, kw) = match (one_d, kd.len()) {
        (true, 2) => (kd[0], 1, kd[1]),
        (false, 3) => (kd[0], kd[1], kd[2]),
        _ => return Err(Error::shape(format!("unsupported depthwise kernel dims {kd:?}"))),
    };
    if kc != c {
        return Err(Error::shape(format!("kernel has {kc} channels, input has {c}")));
    }
    let (sh, sw) = if one_d { (1, stride.1) } else { stride };
    if sh == 0 || sw == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    let (ho, ph) = if one_d { (h, 0) } else { axis_geometry(h, kh, sh, padding)? };
    let (wo, pw) = axis_geometry(w, kw, sw, padding)?;
    let mut out_dims = xd.to_vec();
    let r = out_dims.len();
    out_dims[r - 1] = wo;
    if !one_d {
        out_dims[r - 2] = ho;
    }
    Ok((ConvGeom { n, c, h, w, kh, kw, sh, sw, ph, pw, ho, wo }, out_dims))
}

fn depthwise_forward(x: &Tensor, k: &Tensor, g: &ConvGeom, out_dims: Vec<usize>) -> Result<Tensor> {
    let xs = x.data();
    let ks = k.data();
    let mut out = vec![0.0; g.n * g.c * g.ho * g.wo];
    for n in 0..g.n {
        for c in 0..g.c {
            let xb = &xs[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            let kb = &ks[c * g.kh * g.kw..][..g.kh * g.kw];
            let ob = &mut out[(n * g.c + c) * g.ho * g.wo..][..g.ho * g.wo];
            for i in 0..g.ho {
                for a in 0..g.kh {
                    let ih = (i * g.sh + a) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let row = &xb[ih as usize * g.w..][..g.w];
                    for b in 0..g.kw {
                        let kv = kb[a * g.kw + b];
                        for j in 0..g.wo {
                            let iw = (j * g.sw + b) as isize - g.pw as isize;
                            if iw >= 0 && iw < g.w as isize {
                                ob[i * g.wo + j] += kv * row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_dims, out)
}

fn depthwise_backward(
    x: &Tensor,
    k: &Tensor,
    g: &ConvGeom,
    gout: &Tensor,
    need: &[bool],
) -> (Option<Tensor>, Option<Tensor>) {
    let xs = x.data();
    let ks = k.data();
    let gs = gout.data();
    let mut gx = need[0].then(|| vec![0.0; xs.len()]);
    let mut gk = need[1].then(|| vec![0.0; ks.len()]);
    for n in 0..g.n {
        for c in 0..g.c {
            let base_x = (n * g.c + c) * g.h * g.w;
            let base_o = (n * g.c + c) * g.ho * g.wo;
            for i in 0..g.ho {
                for a in 0..g.kh {
                    let ih = (i * g.sh + a) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let row = base_x + ih as usize * g.w;
                    for b in 0..g.kw {
                        let kidx = c * g.kh * g.kw + a * g.kw + b;
                        let kv = ks[kidx];
                        let mut acc = 0.0;
                        for j in 0..g.wo {
                            let iw = (j * g.sw + b) as isize - g.pw as isize;
                            if iw >= 0 && iw < g.w as isize {
                                let go = gs[base_o + i * g.wo + j];
                                if let Some(gx) = gx.as_mut() {
                                    gx[row + iw as usize] += go * kv;
                                }
                                acc += go * xs[row + iw as usize];
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            gk[kidx] += acc;
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::new(x.dims().to_vec(), d).expect("dims")),
        gk.map(|d| Tensor::new(k.dims().to_vec(), d).expect("dims")),
    )
}

fn conv2d_geom(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, padding: Padding) -> Result<(ConvGeom, usize)> {
    let (xd, wd) = (x.dims(), w.dims());
    if xd.len() != 4 || wd.len() != 4 {
        return Err(Error::shape(format!("conv2d expects 4-d input and weight, got {xd:?} and {wd:?}")));
    }
    if wd[1] != xd[1] {
        return Err(Error::shape(format!("conv2d weight expects {} input channels, input has {}", wd[1], xd[1])));
    }
    if let Some(b) = bias {
        if b.dims() != [wd[0]] {
            return Err(Error::shape(format!("conv2d bias dims {:?} do not match {} outputs", b.dims(), wd[0])));
        }
    }
    let (ho, ph) = axis_geometry(xd[2], wd[2], 1, padding)?;
    let (wo, pw) = axis_geometry(xd[3], wd[3], 1, padding)?;
    Ok((
        ConvGeom { n: xd[0], c: xd[1], h: xd[2], w: xd[3], kh: wd[2], kw: wd[3], sh: 1, sw: 1, ph, pw, ho, wo },
        wd[0],
    ))
}

fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: &ConvGeom, cout: usize) -> Result<Tensor> {
    let xs = x.data();
    let ws = w.data();
    let plane = g.ho * g.wo;
    let mut out = vec![0.0; g.n * cout * plane];
    for n in 0..g.n {
        for o in 0..cout {
            let ob = &mut out[(n * cout + o) * plane..][..plane];
            if let Some(b) = bias {
                ob.iter_mut().for_each(|v| *v = b.data()[o]);
            }
            for ci in 0..g.c {
                let xb = &xs[(n * g.c + ci) * g.h * g.w..][..g.h * g.w];
                for a in 0..g.kh {
                    for b in 0..g.kw {
                        let kv = ws[((o * g.c + ci) * g.kh + a) * g.kw + b];
                        for i in 0..g.ho {
                            let ih = (i + a) as isize - g.ph as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            for j in 0..g.wo {
                                let iw = (j + b) as isize - g.pw as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    ob[i * g.wo + j] += kv * xb[ih as usize * g.w + iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, cout, g.ho, g.wo], out)
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &ConvGeom,
    cout: usize,
    gout: &Tensor,
    need: &[bool],
) -> Vec<Option<Tensor>> {
    let xs = x.data();
    let ws = w.data();
    let gs = gout.data();
    let plane = g.ho * g.wo;
    let mut gx = need[0].then(|| vec![0.0; xs.len()]);
    let mut gw = need[1].then(|| vec![0.0; ws.len()]);
    let mut gb = need.get(2).copied().unwrap_or(false).then(|| vec![0.0; cout]);
    for n in 0..g.n {
        for o in 0..cout {
            let gb_plane = &gs[(n * cout + o) * plane..][..plane];
            if let Some(gb) = gb.as_mut() {
                gb[o] += gb_plane.iter().sum::<f64>();
            }
            for ci in 0..g.c {
                let xbase = (n * g.c + ci) * g.h * g.w;
                for a in 0..g.kh {
                    for b in 0..g.kw {
                        let widx = ((o * g.c + ci) * g.kh + a) * g.kw + b;
                        let kv = ws[widx];
                        let mut acc = 0.0;
                        for i in 0..g.ho {
                            let ih = (i + a) as isize - g.ph as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            for j in 0..g.wo {
                                let iw = (j + b) as isize - g.pw as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    let xi = xbase + ih as usize * g.w + iw as usize;
                                    let go = gb_plane[i * g.wo + j];
                                    acc += go * xs[xi];
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xi] += go * kv;
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    vec![
        gx.map(|d| Tensor::new(x.dims().to_vec(), d).expect("dims")),
        gw.map(|d| Tensor::new(w.dims().to_vec(), d).expect("dims")),
        gb.map(|d| Tensor::new(vec![cout], d).expect("dims")),
    ]
}

/// `(N, Cin, S, Cout)` for a pointwise map.
fn pointwise_geom(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize, usize)> {
    let (xd, wd) = (x.dims(), w.dims());
    if xd.len() < 2 || wd.len() != 2 {
        return Err(Error::shape(format!("pointwise expects [N, C, ...] input and [Cout, Cin] weight, got {xd:?} and {wd:?}")));
    }
    if wd[1] != xd[1] {
        return Err(Error::shape(format!("pointwise weight expects {} channels, input has {}", wd[1], xd[1])));
    }
    if let Some(b) = bias {
        if b.dims() != [wd[0]] {
            return Err(Error::shape(format!("pointwise bias dims {:?} do not match {} outputs", b.dims(), wd[0])));
        }
    }
    let s = xd[2..].iter().product();
    Ok((xd[0], xd[1], s, wd[0]))
}

fn linear_geom(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (xd, wd) = (x.dims(), w.dims());
    if xd.is_empty() || wd.len() != 2 || wd[1] != xd[xd.len() - 1] {
        return Err(Error::shape(format!("linear cannot map input {xd:?} with weight {wd:?}")));
    }
    if b.dims() != [wd[0]] {
        return Err(Error::shape(format!("linear bias dims {:?} do not match {} outputs", b.dims(), wd[0])));
    }
    let din = wd[1];
    Ok((x.numel() / din, din, wd[0]))
}

/// Per-channel layout `(N, C, S)` of a batch-norm input.
fn bn_geom(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let xd = x.dims();
    if xd.len() < 2 {
        return Err(Error::shape(format!("batch_norm expects [N, C, ...], got {xd:?}")));
    }
    if xd[0] == 0 {
        return Err(Error::arg("batch_norm on an empty batch"));
    }
    let c = xd[1];
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::shape(format!(
            "batch_norm has {c} channels but gamma/beta dims are {:?}/{:?}",
            gamma.dims(),
            beta.dims()
        )));
    }
    Ok((xd[0], c, xd[2..].iter().product()))
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Forward> {
    match op {
        Op::Leaf => unreachable!("leaves are never evaluated"),
        Op::DepthwiseConv { stride, padding, one_d } => {
            let (g, out_dims) = depthwise_geom(inputs[0], inputs[1], *stride, *padding, *one_d)?;
            let macs = (g.n * g.c * g.ho * g.wo * g.kh * g.kw) as u64;
            plain(depthwise_forward(inputs[0], inputs[1], &g, out_dims)?, macs)
        }
        Op::Conv2d { padding } => {
            let bias = inputs.get(2).copied();
            let (g, cout) = conv2d_geom(inputs[0], inputs[1], bias, *padding)?;
            let macs = (g.n * cout * g.ho * g.wo * g.c * g.kh * g.kw) as u64;
            plain(conv2d_forward(inputs[0], inputs[1], bias, &g, cout)?, macs)
        }
        Op::Pointwise => {
            let (x, w) = (inputs[0], inputs[1]);
            let bias = inputs.get(2).copied();
            let (n, cin, s, cout) = pointwise_geom(x, w, bias)?;
            let mut out = vec![0.0; n * cout * s];
            for b in 0..n {
                for o in 0..cout {
                    let ob = &mut out[(b * cout + o) * s..][..s];
                    if let Some(bias) = bias {
                        ob.iter_mut().for_each(|v| *v = bias.data()[o]);
                    }
                    for i in 0..cin {
                        let wv = w.data()[o * cin + i];
                        let xb = &x.data()[(b * cin + i) * s..][..s];
                        for (ov, xv) in ob.iter_mut().zip(xb) {
                            *ov += wv * xv;
                        }
                    }
                }
            }
            let mut dims = x.dims().to_vec();
            dims[1] = cout;
            plain(Tensor::new(dims, out)?, (n * s * cin * cout) as u64)
        }
        Op::Linear => {
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            let (m, din, dout) = linear_geom(x, w, b)?;
            let mut out = vec![0.0; m * dout];
            for r in 0..m {
                let xr = &x.data()[r * din..][..din];
                for o in 0..dout {
                    let wr = &w.data()[o * din..][..din];
                    out[r * dout + o] = b.data()[o] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let mut dims = x.dims().to_vec();
            *dims.last_mut().unwrap() = dout;
            plain(Tensor::new(dims, out)?, (m * din * dout) as u64)
        }
        Op::BatchNorm { eps, running } => {
            let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
            let (n, c, s) = bn_geom(x, gamma, beta)?;
            let (mean, var) = match running {
                Some((m, v)) => (m.clone(), v.clone()),
                None => {
                    let count = (n * s) as f64;
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for b in 0..n {
                            acc += x.data()[(b * c + ch) * s..][..s].iter().sum::<f64>();
                        }
                        mean[ch] = acc / count;
                        let mut sq = 0.0;
                        for b in 0..n {
                            sq += x.data()[(b * c + ch) * s..][..s]
                                .iter()
                                .map(|v| (v - mean[ch]).powi(2))
                                .sum::<f64>();
                        }
                        var[ch] = sq / count;
                    }
                    (mean, var)
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; x.numel()];
            let mut out = vec![0.0; x.numel()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    for i in base..base + s {
                        xhat[i] = (x.data()[i] - mean[ch]) * inv_std[ch];
                        out[i] = gamma.data()[ch] * xhat[i] + beta.data()[ch];
                    }
                }
            }
            Ok(Forward {
                value: Tensor::new(x.dims().to_vec(), out)?,
                saved: Saved::BatchNorm { xhat, inv_std, mean, var },
                macs: 0,
            })
        }
        Op::Activation(kind) => plain(inputs[0].map(|v| kind.apply(v)), 0),
        Op::MeanLast => {
            let x = inputs[0];
            let t = *x.dims().last().ok_or_else(|| Error::shape("mean over the last axis of a scalar"))?;
            if t == 0 {
                return Err(Error::arg("mean over an empty axis"));
            }
            // Shifted by the first element: exact for rows that are constant.
            let out: Vec<f64> = x
                .data()
                .chunks(t)
                .map(|row| row[0] + row.iter().map(|v| v - row[0]).sum::<f64>() / t as f64)
                .collect();
            plain(Tensor::new(x.dims()[..x.rank() - 1].to_vec(), out)?, 0)
        }
        Op::Add | Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.dims() != b.dims() {
                return Err(Error::shape(format!("elementwise op on {:?} and {:?}", a.dims(), b.dims())));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| if matches!(op, Op::Add) { x + y } else { x * y })
                .collect();
            plain(Tensor::new(a.dims().to_vec(), data)?, 0)
        }
        Op::Scale(s) => plain(inputs[0].map(|v| v * s), 0),
        Op::SumAll => plain(Tensor::scalar(inputs[0].data().iter().sum()), 0),
        Op::MulPrefix => {
            let (x, w) = (inputs[0], inputs[1]);
            if w.rank() > x.rank() || x.dims()[..w.rank()] != *w.dims() {
                return Err(Error::shape(format!("cannot broadcast {:?} over {:?}", w.dims(), x.dims())));
            }
            let block = x.numel() / w.numel().max(1);
            let data = x.data().iter().enumerate().map(|(i, v)| v * w.data()[i / block]).collect();
            plain(Tensor::new(x.dims().to_vec(), data)?, 0)
        }
        Op::Reshape(dims) => plain(inputs[0].clone().reshape(dims.clone())?, 0),
        Op::SwapLast2 => {
            let x = inputs[0];
            let r = x.rank();
            if r < 2 {
                return Err(Error::shape("swap_last2 needs rank >= 2"));
            }
            let (a, b) = (x.dims()[r - 2], x.dims()[r - 1]);
            let mut out = vec![0.0; x.numel()];
            for (blk_in, blk_out) in x.data().chunks(a * b).zip(out.chunks_mut(a * b)) {
                for i in 0..a {
                    for j in 0..b {
                        blk_out[j * a + i] = blk_in[i * b + j];
                    }
                }
            }
            let mut dims = x.dims().to_vec();
            dims.swap(r - 2, r - 1);
            plain(Tensor::new(dims, out)?, 0)
        }
        Op::SoftmaxXent { targets } => {
            let logits = inputs[0];
            if logits.rank() != 2 || logits.dims() != targets.dims() {
                return Err(Error::shape(format!(
                    "softmax_cross_entropy logits {:?} vs targets {:?}",
                    logits.dims(),
                    targets.dims()
                )));
            }
            let (n, k) = (logits.dims()[0], logits.dims()[1]);
            if n == 0 {
                return Err(Error::arg("softmax_cross_entropy on an empty batch"));
            }
            let mut probs = vec![0.0; n * k];
            let mut loss = 0.0;
            for r in 0..n {
                let row = &logits.data()[r * k..][..k];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for j in 0..k {
                    let logp = row[j] - lse;
                    probs[r * k + j] = logp.exp();
                    let w = targets.data()[r * k + j];
                    if w != 0.0 {
                        loss -= w * logp;
                    }
                }
            }
            Ok(Forward { value: Tensor::scalar(loss / n as f64), saved: Saved::Probs(probs), macs: 0 })
        }
    }
}

/// Gradients with respect to each input; `None` where `need` is false.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    saved: &Saved,
    gout: &Tensor,
    need: &[bool],
) -> Vec<Option<Tensor>> {
    match op {
        Op::Leaf => Vec::new(),
        Op::DepthwiseConv { stride, padding, one_d } => {
            let (g, _) = depthwise_geom(inputs[0], inputs[1], *stride, *padding, *one_d).expect("validated in forward");
            let (gx, gk) = depthwise_backward(inputs[0], inputs[1], &g, gout, need);
            vec![gx, gk]
        }
        Op::Conv2d { padding } => {
            let (g, cout) = conv2d_geom(inputs[0], inputs[1], inputs.get(2).copied(), *padding).expect("validated in forward");
            let mut grads = conv2d_backward(inputs[0], inputs[1], &g, cout, gout, need);
            grads.truncate(inputs.len());
            grads
        }
        Op::Pointwise => {
            let (x, w) = (inputs[0], inputs[1]);
            let (n, cin, s, cout) = pointwise_geom(x, w, inputs.get(2).copied()).expect("validated in forward");
            let gs = gout.data();
            let mut gx = need[0].then(|| vec![0.0; x.numel()]);
            let mut gw = need[1].then(|| vec![0.0; w.numel()]);
            let mut gb = need.get(2).copied().unwrap_or(false).then(|| vec![0.0; cout]);
            for b in 0..n {
                for o in 0..cout {
                    let gb_row = &gs[(b * cout + o) * s..][..s];
                    if let Some(gb) = gb.as_mut() {
                        gb[o] += gb_row.iter().sum::<f64>();
                    }
                    for i in 0..cin {
                        let xb = &x.data()[(b * cin + i) * s..][..s];
                        if let Some(gw) = gw.as_mut() {
                            gw[o * cin + i] += gb_row.iter().zip(xb).map(|(g, x)| g * x).sum::<f64>();
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wv = w.data()[o * cin + i];
                            for (gxv, gv) in gx[(b * cin + i) * s..][..s].iter_mut().zip(gb_row) {
                                *gxv += wv * gv;
                            }
                        }
                    }
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::new(x.dims().to_vec(), d).expect("dims")),
                gw.map(|d| Tensor::new(w.dims().to_vec(), d).expect("dims")),
            ];
            if inputs.len() == 3 {
                grads.push(gb.map(|d| Tensor::new(vec![cout], d).expect("dims")));
            }
            grads
        }
        Op::Linear => {
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            let (m, din, dout) = linear_geom(x, w, b).expect("validated in forward");
            let gs = gout.data();
            let mut gx = need[0].then(|| vec![0.0; x.numel()]);
            let mut gw = need[1].then(|| vec![0.0; w.numel()]);
            let mut gb = need[2].then(|| vec![0.0; dout]);
            for r in 0..m {
                let xr = &x.data()[r * din..][..din];
                let gr = &gs[r * dout..][..dout];
                for o in 0..dout {
                    let gv = gr[o];
                    if gv == 0.0 {
                        continue;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[o] += gv;
                    }
                    if let Some(gw) = gw.as_mut() {
                        for (gwv, xv) in gw[o * din..][..din].iter_mut().zip(xr) {
                            *gwv += gv * xv;
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        for (gxv, wv) in gx[r * din..][..din].iter_mut().zip(&w.data()[o * din..][..din]) {
                            *gxv += gv * wv;
                        }
                    }
                }
            }
            vec![
                gx.map(|d| Tensor::new(x.dims().to_vec(), d).expect("dims")),
                gw.map(|d| Tensor::new(w.dims().to_vec(), d).expect("dims")),
                gb.map(|d| Tensor::new(vec![dout], d).expect("dims")),
            ]
        }
        Op::BatchNorm { running, .. } => {
            let (x, gamma) = (inputs[0], inputs[1]);
            let Saved::BatchNorm { xhat, inv_std, .. } = saved else { unreachable!("batch_norm saves statistics") };
            let (n, c, s) = (x.dims()[0], x.dims()[1], x.numel() / (x.dims()[0] * x.dims()[1]));
            let gs = gout.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    for i in base..base + s {
                        sum_g[ch] += gs[i];
                        sum_gx[ch] += gs[i] * xhat[i];
                    }
                }
            }
            let gx = need[0].then(|| {
                let count = (n * s) as f64;
                let mut gx = vec![0.0; x.numel()];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        let scale = gamma.data()[ch] * inv_std[ch];
                        for i in base..base + s {
                            gx[i] = if running.is_some() {
                                gs[i] * scale
                            } else {
                                scale * (gs[i] - sum_g[ch] / count - xhat[i] * sum_gx[ch] / count)
                            };
                        }
                    }
                }
                Tensor::new(x.dims().to_vec(), gx).expect("dims")
            });
            vec![
                gx,
                need[1].then(|| Tensor::new(vec![c], sum_gx).expect("dims")),
                need[2].then(|| Tensor::new(vec![c], sum_g).expect("dims")),
            ]
        }
        Op::Activation(kind) => {
            let x = inputs[0];
            let data = x.data().iter().zip(gout.data()).map(|(&v, g)| g * kind.derivative(v)).collect();
            vec![Some(Tensor::new(x.dims().to_vec(), data).expect("dims"))]
        }
        Op::MeanLast => {
            let x = inputs[0];
            let t = *x.dims().last().unwrap();
            let data = (0..x.numel()).map(|i| gout.data()[i / t] / t as f64).collect();
            vec![Some(Tensor::new(x.dims().to_vec(), data).expect("dims"))]
        }
        Op::Add => vec![need[0].then(|| gout.clone()), need[1].then(|| gout.clone())],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let prod = |t: &Tensor| {
                let data = t.data().iter().zip(gout.data()).map(|(v, g)| v * g).collect();
                Tensor::new(t.dims().to_vec(), data).expect("dims")
            };
            vec![need[0].then(|| prod(b)), need[1].then(|| prod(a))]
        }
        Op::Scale(s) => vec![Some(gout.map(|g| g * s))],
        Op::SumAll => {
            let g = gout.data()[0];
            vec![Some(Tensor::full(inputs[0].dims().to_vec(), g))]
        }
        Op::MulPrefix => {
            let (x, w) = (inputs[0], inputs[1]);
            let block = x.numel() / w.numel().max(1);
            let gx = need[0].then(|| {
                let data = gout.data().iter().enumerate().map(|(i, g)| g * w.data()[i / block]).collect();
                Tensor::new(x.dims().to_vec(), data).expect("dims")
            });
            let gw = need[1].then(|| {
                let data = gout
                    .data()
                    .chunks(block)
                    .zip(x.data().chunks(block))
                    .map(|(g, x)| g.iter().zip(x).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::new(w.dims().to_vec(), data).expect("dims")
            });
            vec![gx, gw]
        }
        Op::Reshape(_) => vec![Some(gout.clone().reshape(inputs[0].dims().to_vec()).expect("dims"))],
        Op::SwapLast2 => {
            let swapped = forward(&Op::SwapLast2, &[gout]).expect("rank checked in forward").value;
            debug_assert_eq!(swapped.dims(), inputs[0].dims());
            vec![Some(swapped)]
        }
        Op::SoftmaxXent { targets } => {
            let Saved::Probs(probs) = saved else { unreachable!("softmax saves probabilities") };
            let n = inputs[0].dims()[0] as f64;
            let g = gout.data()[0];
            let data = probs.iter().zip(targets.data()).map(|(p, w)| g * (p - w) / n).collect();
            vec![Some(Tensor::new(inputs[0].dims().to_vec(), data).expect("dims"))]
        }
    }
}
