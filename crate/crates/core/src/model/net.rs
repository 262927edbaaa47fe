use std::fmt;

use super::config::{ModelConfig, Placement};
use super::layers::{Attention, ConvBlock, MixerBlock};
use super::params::{ParamId, ParamStore, Session};
use crate::error::{Error, Result};
use crate::numerics::{BatchNormMode, Graph, Tensor, Var};

/// Trainable scalars and multiply-accumulates for one `[1, F, T]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FootprintReport {
    pub params: usize,
    pub macs: u64,
}

impl fmt::Display for FootprintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} params ({:.1} K), {} MACs ({:.2} M)",
            self.params,
            self.params as f64 / 1e3,
            self.macs,
            self.macs as f64 / 1e6
        )
    }
}

/// A layer followed by an optional attention module.
#[derive(Clone, Debug)]
pub struct Stage<L> {
    pub layer: L,
    pub attention: Option<Attention>,
}

/// Stem lift, pre-conv blocks, ConvMixer blocks, post-conv blocks, then
/// pooling and a linear classifier.
#[derive(Clone, Debug)]
pub struct FcaNet {
    cfg: ModelConfig,
    store: ParamStore,
    stem_weight: ParamId,
    stem_bias: ParamId,
    pub pre: Vec<Stage<ConvBlock>>,
    pub blocks: Vec<Stage<MixerBlock>>,
    pub post: Vec<Stage<ConvBlock>>,
    pub final_attention: Option<Attention>,
    head_weight: ParamId,
    head_bias: ParamId,
}

impl FcaNet {
    /// Weights are drawn per parameter name from `seed`, so variants that
    /// differ only in attention share every other weight.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let c = cfg.channels;
        let attend = |store: &mut ParamStore, here: Placement, name: &str, freq: usize| {
            (cfg.placement == here)
                .then(|| Attention::new(store, &format!("{name}.att"), cfg.attention, cfg, freq))
                .transpose()
        };

        let stem_weight = store.uniform("stem.weight", &[cfg.stem_channels, 1], 1);
        let stem_bias = store.filled("stem.bias", &[cfg.stem_channels], 0.0);
        let mut pre = Vec::new();
        for i in 0..cfg.pre_blocks {
            let name = format!("pre{i}");
            let c_in = if i == 0 { cfg.stem_channels } else { c };
            let layer = ConvBlock::new(&mut store, &name, c_in, c, cfg.kernel_1d);
            pre.push(Stage { layer, attention: attend(&mut store, Placement::Pre, &name, cfg.freq_bins)? });
        }
        let mut blocks = Vec::new();
        for i in 0..cfg.blocks {
            let name = format!("block{i}");
            let layer = MixerBlock::new(&mut store, &name, cfg);
            blocks.push(Stage { layer, attention: attend(&mut store, Placement::All, &name, cfg.freq_bins)? });
        }
        let mut post = Vec::new();
        for i in 0..cfg.post_blocks {
            let name = format!("post{i}");
            let layer = ConvBlock::new(&mut store, &name, c, c, cfg.kernel_1d);
            post.push(Stage { layer, attention: attend(&mut store, Placement::Post, &name, cfg.freq_bins)? });
        }
        let final_attention = attend(&mut store, Placement::Final, "final", cfg.freq_bins)?;
        let head_weight = store.uniform("head.weight", &[cfg.classes, c], c);
        let head_bias = store.filled("head.bias", &[cfg.classes], 0.0);
        Ok(FcaNet {
            cfg: cfg.clone(),
            store,
            stem_weight,
            stem_bias,
            pre,
            blocks,
            post,
            final_attention,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Every inserted attention module, in forward order.
    pub fn attentions(&self) -> Vec<&Attention> {
        let mut out: Vec<&Attention> = self.pre.iter().filter_map(|s| s.attention.as_ref()).collect();
        out.extend(self.blocks.iter().filter_map(|s| s.attention.as_ref()));
        out.extend(self.post.iter().filter_map(|s| s.attention.as_ref()));
        out.extend(self.final_attention.as_ref());
        out
    }

    /// Input dims this network accepts for a batch of `n`.
    pub fn input_dims(&self, n: usize) -> Vec<usize> {
        vec![n, 1, self.cfg.freq_bins, self.cfg.frames]
    }

    /// Logits `[N, K]` for input `[N, 1, F, T]`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let dims = s.graph.value(x).dims().to_vec();
        if dims.len() != 4 || dims[1..] != self.input_dims(0)[1..] {
            return Err(Error::shape(format!(
                "network expects [N, 1, {}, {}], got {dims:?}",
                self.cfg.freq_bins, self.cfg.frames
            )));
        }
        let (w, b) = (s.var(self.stem_weight), s.var(self.stem_bias));
        let mut h = s.graph.pointwise_conv(x, w, Some(b))?;
        for stage in &self.pre {
            h = stage.layer.forward(s, h)?;
            h = attend(s, stage.attention.as_ref(), h)?;
        }
        for stage in &self.blocks {
            h = stage.layer.forward(s, h)?;
            h = attend(s, stage.attention.as_ref(), h)?;
        }
        for stage in &self.post {
            h = stage.layer.forward(s, h)?;
            h = attend(s, stage.attention.as_ref(), h)?;
        }
        let (n, c, f) = (dims[0], self.cfg.channels, self.cfg.freq_bins);
        let mut pooled = s.graph.global_average_pool_time(h)?;
        if let Some(att) = &self.final_attention {
            let plane = s.graph.reshape(pooled, vec![n, c, f, 1])?;
            let plane = att.forward(s, plane)?;
            pooled = s.graph.reshape(plane, vec![n, c, f])?;
        }
        let pooled = s.graph.mean_last(pooled)?;
        let (w, b) = (s.var(self.head_weight), s.var(self.head_bias));
        s.graph.linear(pooled, w, b)
    }

    /// Eval-mode logits with running batch-norm statistics.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut s = Session::frozen(&mut g, &self.store, BatchNormMode::Eval);
        let x = s.graph.constant(input.clone());
        let y = self.forward(&mut s, x)?;
        Ok(g.value(y).clone())
    }

    /// Analytic parameter and MAC count.
    pub fn footprint(&self) -> FootprintReport {
        let (f, t) = (self.cfg.freq_bins, self.cfg.frames);
        let att = |a: &Option<Attention>| a.as_ref().map_or((0, 0), |a| (a.params(), a.macs()));
        let mut params = 2 * self.cfg.stem_channels;
        let mut macs = (self.cfg.stem_channels * f * t) as u64;
        for s in self.pre.iter().chain(&self.post) {
            let (p, m) = att(&s.attention);
            params += s.layer.params() + p;
            macs += s.layer.macs(f, t) + m;
        }
        for s in &self.blocks {
            let (p, m) = att(&s.attention);
            params += s.layer.params() + p;
            macs += s.layer.macs(f, t) + m;
        }
        let (p, m) = att(&self.final_attention);
        params += p + self.cfg.classes * self.cfg.channels + self.cfg.classes;
        macs += m + (self.cfg.classes * self.cfg.channels) as u64;
        FootprintReport { params, macs }
    }

    /// MACs recorded by the tensor engine for one forward pass of a single
    /// input.
    pub fn measured_macs(&self) -> Result<u64> {
        let mut g = Graph::new();
        let mut s = Session::frozen(&mut g, &self.store, BatchNormMode::Eval);
        let x = s.graph.constant(Tensor::zeros(self.input_dims(1)));
        self.forward(&mut s, x)?;
        Ok(g.total_macs())
    }
}

fn attend(s: &mut Session, attention: Option<&Attention>, x: Var) -> Result<Var> {
    match attention {
        Some(a) => a.forward(s, x),
        None => Ok(x),
    }
}

/// Footprint of `cfg` without keeping the network.
pub fn count_footprint(cfg: &ModelConfig) -> Result<FootprintReport> {
    Ok(FcaNet::build(cfg, 0)?.footprint())
}
