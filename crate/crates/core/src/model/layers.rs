use super::config::{AttentionKind, ModelConfig};
use super::params::{BnId, ParamId, ParamStore, Session};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Padding, Var};

/// Batch norm with learned scale/shift, initialized to the identity.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Norm {
            gamma: store.filled(&format!("{name}.gamma"), &[channels], 1.0),
            beta: store.filled(&format!("{name}.beta"), &[channels], 0.0),
            state: store.batch_norm(name, channels),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        s.batch_norm(x, self.gamma, self.beta, self.state)
    }

    pub fn params(&self, channels: usize) -> usize {
        2 * channels
    }
}

/// Depthwise then pointwise convolution over `[N, C, F, T]`, either a
/// `kF x kT` kernel or a time-only `kT` kernel.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    /// `None` for a time-only kernel.
    pub kernel_freq: Option<usize>,
    pub kernel_time: usize,
}

impl SeparableConv {
    pub fn new_2d(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: (usize, usize)) -> Self {
        SeparableConv {
            depthwise: store.uniform(&format!("{name}.depthwise"), &[c_in, k.0, k.1], k.0 * k.1),
            pointwise: store.uniform(&format!("{name}.pointwise"), &[c_out, c_in], c_in),
            bias: store.filled(&format!("{name}.bias"), &[c_out], 0.0),
            c_in,
            c_out,
            kernel_freq: Some(k.0),
            kernel_time: k.1,
        }
    }

    pub fn new_1d(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        SeparableConv {
            depthwise: store.uniform(&format!("{name}.depthwise"), &[c_in, k], k),
            pointwise: store.uniform(&format!("{name}.pointwise"), &[c_out, c_in], c_in),
            bias: store.filled(&format!("{name}.bias"), &[c_out], 0.0),
            c_in,
            c_out,
            kernel_freq: None,
            kernel_time: k,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let k = s.var(self.depthwise);
        let h = match self.kernel_freq {
            Some(_) => s.graph.depthwise_conv2d(x, k, (1, 1), Padding::Same)?,
            None => s.graph.depthwise_conv1d(x, k, 1, Padding::Same)?,
        };
        let (w, b) = (s.var(self.pointwise), s.var(self.bias));
        s.graph.pointwise_conv(h, w, Some(b))
    }

    pub fn params(&self) -> usize {
        self.c_in * self.kernel_freq.unwrap_or(1) * self.kernel_time + self.c_in * self.c_out + self.c_out
    }

    pub fn macs(&self, f: usize, t: usize) -> u64 {
        let positions = (f * t) as u64;
        let k = (self.kernel_freq.unwrap_or(1) * self.kernel_time) as u64;
        self.c_in as u64 * positions * k + (self.c_in * self.c_out) as u64 * positions
    }
}

/// Pre- and post-conv block: 1-D separable conv over time, BN, Swish.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: SeparableConv,
    pub norm: Norm,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        ConvBlock {
            conv: SeparableConv::new_1d(store, &format!("{name}.conv"), c_in, c_out, k),
            norm: Norm::new(store, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.conv.forward(s, x)?;
        let h = self.norm.forward(s, h)?;
        s.graph.activation(h, Activation::Swish)
    }

    pub fn params(&self) -> usize {
        self.conv.params() + self.norm.params(self.conv.c_out)
    }

    pub fn macs(&self, f: usize, t: usize) -> u64 {
        self.conv.macs(f, t)
    }
}

/// Two linear layers, `dim -> hidden -> dim`, with GELU between, over the
/// last axis.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dim: usize,
    pub hidden: usize,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Self {
        Mlp {
            w1: store.uniform(&format!("{name}.fc1.weight"), &[hidden, dim], dim),
            b1: store.filled(&format!("{name}.fc1.bias"), &[hidden], 0.0),
            w2: store.uniform(&format!("{name}.fc2.weight"), &[dim, hidden], hidden),
            b2: store.filled(&format!("{name}.fc2.bias"), &[dim], 0.0),
            dim,
            hidden,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (s.var(self.w1), s.var(self.b1), s.var(self.w2), s.var(self.b2));
        let h = s.graph.linear(x, w1, b1)?;
        let h = s.graph.activation(h, Activation::Gelu)?;
        s.graph.linear(h, w2, b2)
    }

    pub fn params(&self) -> usize {
        2 * self.dim * self.hidden + self.dim + self.hidden
    }

    pub fn macs(&self, rows: usize) -> u64 {
        (2 * rows * self.dim * self.hidden) as u64
    }
}

/// Sum of a time-mixing MLP (per channel and frequency) and a
/// frequency-mixing MLP (per channel and frame).
#[derive(Clone, Debug)]
pub struct MixerLayer {
    pub time: Mlp,
    pub freq: Mlp,
}

impl MixerLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Self {
        let (f, t) = (cfg.freq_bins, cfg.frames);
        MixerLayer {
            time: Mlp::new(store, &format!("{name}.time"), t, cfg.mixer_hidden(t)),
            freq: Mlp::new(store, &format!("{name}.freq"), f, cfg.mixer_hidden(f)),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let along_time = self.time.forward(s, x)?;
        let xt = s.graph.swap_last2(x)?;
        let along_freq = self.freq.forward(s, xt)?;
        let along_freq = s.graph.swap_last2(along_freq)?;
        s.graph.add(along_time, along_freq)
    }

    pub fn params(&self) -> usize {
        self.time.params() + self.freq.params()
    }

    pub fn macs(&self, c: usize) -> u64 {
        self.time.macs(c * self.freq.dim) + self.freq.macs(c * self.time.dim)
    }
}

/// `x + y1 + mixer(y2)` where `z = swish(f1(swish(f(x))))`,
/// `y1 = swish(bn(f2a(z)))` and `y2 = swish(bn(f2b(y1)))`.
#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub f: SeparableConv,
    pub f1: SeparableConv,
    pub f2a: SeparableConv,
    pub norm_a: Norm,
    pub f2b: SeparableConv,
    pub norm_b: Norm,
    pub mixer: MixerLayer,
}

impl MixerBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let k2 = (cfg.kernel_freq, cfg.kernel_time);
        MixerBlock {
            f: SeparableConv::new_2d(store, &format!("{name}.f"), c, c, k2),
            f1: SeparableConv::new_2d(store, &format!("{name}.f1"), c, c, k2),
            f2a: SeparableConv::new_1d(store, &format!("{name}.f2a"), c, c, cfg.kernel_1d),
            norm_a: Norm::new(store, &format!("{name}.bn_a"), c),
            f2b: SeparableConv::new_1d(store, &format!("{name}.f2b"), c, c, cfg.kernel_1d),
            norm_b: Norm::new(store, &format!("{name}.bn_b"), c),
            mixer: MixerLayer::new(store, &format!("{name}.mixer"), cfg),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.f.forward(s, x)?;
        let h = s.graph.activation(h, Activation::Swish)?;
        let h = self.f1.forward(s, h)?;
        let z = s.graph.activation(h, Activation::Swish)?;

        let h = self.f2a.forward(s, z)?;
        let h = self.norm_a.forward(s, h)?;
        let y1 = s.graph.activation(h, Activation::Swish)?;

        let h = self.f2b.forward(s, y1)?;
        let h = self.norm_b.forward(s, h)?;
        let y2 = s.graph.activation(h, Activation::Swish)?;

        let mixed = self.mixer.forward(s, y2)?;
        let out = s.graph.add(x, y1)?;
        s.graph.add(out, mixed)
    }

    pub fn params(&self) -> usize {
        let c = self.f.c_out;
        self.f.params()
            + self.f1.params()
            + self.f2a.params()
            + self.f2b.params()
            + self.norm_a.params(c)
            + self.norm_b.params(c)
            + self.mixer.params()
    }

    pub fn macs(&self, f: usize, t: usize) -> u64 {
        [&self.f, &self.f1, &self.f2a, &self.f2b].iter().map(|l| l.macs(f, t)).sum::<u64>()
            + self.mixer.macs(self.f.c_out)
    }
}

/// ECA kernel: the odd integer nearest `log2(C)/2 + 1/2`, ties down, at
/// least 1.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = (channels.max(1) as f64).log2() / 2.0 + 0.5;
    let lower = 2.0 * ((t - 1.0) / 2.0).floor() + 1.0;
    let k = if t - lower <= lower + 2.0 - t { lower } else { lower + 2.0 };
    (k as usize).max(1)
}

/// Channel or channel-frequency attention over `[N, C, F, T]`.
#[derive(Clone, Debug)]
pub enum Attention {
    /// Squeeze-and-excitation: two FC layers on the pooled channel vector.
    Se { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId, channels: usize, hidden: usize },
    /// Efficient channel attention: one bias-free conv across channels.
    Eca { kernel: ParamId, channels: usize, k: usize },
    /// 2-D conv attention on the time-pooled `C x F` plane.
    C2d { conv1: ParamId, norm: Norm, conv2: ParamId, bias2: ParamId, mid: usize, channels: usize, freq: usize },
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, kind: AttentionKind, cfg: &ModelConfig, freq: usize) -> Result<Self> {
        let c = cfg.channels;
        Ok(match kind {
            AttentionKind::None => return Err(Error::config("attention kind none has no module")),
            AttentionKind::Se => {
                let hidden = (c / cfg.se_reduction).max(1);
                Attention::Se {
                    w1: store.uniform(&format!("{name}.fc1.weight"), &[hidden, c], c),
                    b1: store.filled(&format!("{name}.fc1.bias"), &[hidden], 0.0),
                    w2: store.uniform(&format!("{name}.fc2.weight"), &[c, hidden], hidden),
                    b2: store.filled(&format!("{name}.fc2.bias"), &[c], 0.0),
                    channels: c,
                    hidden,
                }
            }
            AttentionKind::Eca => {
                let k = eca_kernel_size(c);
                Attention::Eca { kernel: store.uniform(&format!("{name}.conv"), &[1, k], k), channels: c, k }
            }
            AttentionKind::C2d => {
                let m = cfg.c2d_channels;
                Attention::C2d {
                    conv1: store.uniform(&format!("{name}.conv1"), &[m, 1, 3, 3], 9),
                    norm: Norm::new(store, &format!("{name}.bn"), m),
                    conv2: store.uniform(&format!("{name}.conv2"), &[1, m, 3, 3], 9 * m),
                    bias2: store.filled(&format!("{name}.conv2_bias"), &[1], 0.0),
                    mid: m,
                    channels: c,
                    freq,
                }
            }
        })
    }

    /// Attention weights: `[N, C]` for SE/ECA, `[N, C, F]` for C2D.
    pub fn weights(&self, s: &mut Session, x: Var) -> Result<Var> {
        let dims = s.graph.value(x).dims().to_vec();
        if dims.len() != 4 {
            return Err(Error::shape(format!("attention expects [N, C, F, T], got {dims:?}")));
        }
        let n = dims[0];
        match self {
            Attention::Se { w1, b1, w2, b2, .. } => {
                let z = squeeze(s, x, &dims)?;
                let (w1, b1, w2, b2) = (s.var(*w1), s.var(*b1), s.var(*w2), s.var(*b2));
                let h = s.graph.linear(z, w1, b1)?;
                let h = s.graph.activation(h, Activation::Relu)?;
                let h = s.graph.linear(h, w2, b2)?;
                s.graph.activation(h, Activation::Sigmoid)
            }
            Attention::Eca { kernel, .. } => {
                let z = squeeze(s, x, &dims)?;
                let z = s.graph.reshape(z, vec![n, 1, dims[1]])?;
                let k = s.var(*kernel);
                let h = s.graph.depthwise_conv1d(z, k, 1, Padding::Same)?;
                let h = s.graph.reshape(h, vec![n, dims[1]])?;
                s.graph.activation(h, Activation::Sigmoid)
            }
            Attention::C2d { conv1, norm, conv2, bias2, .. } => {
                let z = s.graph.global_average_pool_time(x)?;
                let z = s.graph.reshape(z, vec![n, 1, dims[1], dims[2]])?;
                let w1 = s.var(*conv1);
                let h = s.graph.conv2d(z, w1, None, Padding::Same)?;
                let h = norm.forward(s, h)?;
                let h = s.graph.activation(h, Activation::Relu)?;
                let (w2, b2) = (s.var(*conv2), s.var(*bias2));
                let h = s.graph.conv2d(h, w2, Some(b2), Padding::Same)?;
                let h = s.graph.reshape(h, vec![n, dims[1], dims[2]])?;
                s.graph.activation(h, Activation::Sigmoid)
            }
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = self.weights(s, x)?;
        s.graph.mul_prefix(x, w)
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            Attention::Se { .. } => AttentionKind::Se,
            Attention::Eca { .. } => AttentionKind::Eca,
            Attention::C2d { .. } => AttentionKind::C2d,
        }
    }

    pub fn params(&self) -> usize {
        match *self {
            Attention::Se { channels, hidden, .. } => 2 * channels * hidden + channels + hidden,
            Attention::Eca { k, .. } => k,
            Attention::C2d { mid, .. } => 9 * mid + 2 * mid + 9 * mid + 1,
        }
    }

    pub fn macs(&self) -> u64 {
        match *self {
            Attention::Se { channels, hidden, .. } => (2 * channels * hidden) as u64,
            Attention::Eca { channels, k, .. } => (channels * k) as u64,
            Attention::C2d { mid, channels, freq, .. } => (2 * 9 * mid * channels * freq) as u64,
        }
    }
}

/// Mean over frequency and time: `[N, C, F, T] -> [N, C]`.
fn squeeze(s: &mut Session, x: Var, dims: &[usize]) -> Result<Var> {
    let flat = s.graph.reshape(x, vec![dims[0], dims[1], dims[2] * dims[3]])?;
    s.graph.global_average_pool_time(flat)
}
