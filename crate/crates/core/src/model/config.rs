use std::fmt;
use std::str::FromStr;

use crate::config::{parse_value, Settings};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    None,
    Se,
    Eca,
    C2d,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [AttentionKind::None, AttentionKind::Se, AttentionKind::Eca, AttentionKind::C2d];
    /// The three real attention modules.
    pub const MODULES: [AttentionKind; 3] = [AttentionKind::Se, AttentionKind::Eca, AttentionKind::C2d];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Se => "se",
            AttentionKind::Eca => "eca",
            AttentionKind::C2d => "c2d",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown attention kind '{s}'")))
    }
}

/// Where attention modules are inserted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    None,
    /// After each pre-conv block.
    Pre,
    /// After each post-conv block.
    Post,
    /// After every ConvMixer block.
    All,
    /// On the time-pooled map just ahead of the classifier.
    Final,
}

impl Placement {
    pub const ALL: [Placement; 5] = [Placement::None, Placement::Pre, Placement::Post, Placement::All, Placement::Final];
    pub const INSERTING: [Placement; 4] = [Placement::Pre, Placement::Post, Placement::All, Placement::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::Pre => "pre",
            Placement::Post => "post",
            Placement::All => "all",
            Placement::Final => "final",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Placement::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown placement '{s}'")))
    }
}

/// Network hyperparameters. Input maps are `[1, freq_bins, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub freq_bins: usize,
    pub frames: usize,
    pub stem_channels: usize,
    pub pre_blocks: usize,
    pub blocks: usize,
    pub post_blocks: usize,
    pub channels: usize,
    pub kernel_freq: usize,
    pub kernel_time: usize,
    pub kernel_1d: usize,
    pub mixer_ratio: f64,
    pub attention: AttentionKind,
    pub placement: Placement,
    pub se_reduction: usize,
    pub c2d_channels: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            freq_bins: 40,
            frames: 101,
            stem_channels: 8,
            pre_blocks: 1,
            blocks: 5,
            post_blocks: 1,
            channels: 3,
            kernel_freq: 5,
            kernel_time: 5,
            kernel_1d: 7,
            mixer_ratio: 1.0,
            attention: AttentionKind::C2d,
            placement: Placement::All,
            se_reduction: 8,
            c2d_channels: 4,
            classes: 12,
        }
    }
}

impl ModelConfig {
    /// The small network used by gradient checks: B=2, C=8 on 8x12 maps.
    pub fn tiny(attention: AttentionKind, placement: Placement) -> Self {
        ModelConfig {
            freq_bins: 8,
            frames: 12,
            stem_channels: 4,
            blocks: 2,
            channels: 8,
            kernel_freq: 3,
            kernel_time: 3,
            kernel_1d: 3,
            attention,
            placement,
            ..ModelConfig::default()
        }
    }

    pub fn with_attention(&self, attention: AttentionKind, placement: Placement) -> Self {
        ModelConfig { attention, placement, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("freq_bins", self.freq_bins),
            ("frames", self.frames),
            ("stem_channels", self.stem_channels),
            ("pre_blocks", self.pre_blocks),
            ("blocks", self.blocks),
            ("post_blocks", self.post_blocks),
            ("channels", self.channels),
            ("kernel_freq", self.kernel_freq),
            ("kernel_time", self.kernel_time),
            ("kernel_1d", self.kernel_1d),
            ("se_reduction", self.se_reduction),
            ("c2d_channels", self.c2d_channels),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !(self.mixer_ratio.is_finite() && self.mixer_ratio > 0.0) {
            return Err(Error::config(format!("mixer_ratio must be positive, got {}", self.mixer_ratio)));
        }
        if (self.attention == AttentionKind::None) != (self.placement == Placement::None) {
            return Err(Error::config(format!(
                "attention {} is incompatible with placement {}",
                self.attention, self.placement
            )));
        }
        Ok(())
    }

    /// Hidden width of a mixing MLP over an axis of length `dim`.
    pub fn mixer_hidden(&self, dim: usize) -> usize {
        ((self.mixer_ratio * dim as f64).round() as usize).max(1)
    }

    /// Short variant name such as `fcanet-all-c2d` or `convmixer`.
    pub fn variant_name(&self) -> String {
        match self.placement {
            Placement::None => "convmixer".into(),
            p => format!("fcanet-{p}-{}", self.attention),
        }
    }
}

impl Settings for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "freq_bins" => self.freq_bins = parse_value(key, value)?,
            "frames" => self.frames = parse_value(key, value)?,
            "stem_channels" => self.stem_channels = parse_value(key, value)?,
            "pre_blocks" => self.pre_blocks = parse_value(key, value)?,
            "blocks" => self.blocks = parse_value(key, value)?,
            "post_blocks" => self.post_blocks = parse_value(key, value)?,
            "channels" => self.channels = parse_value(key, value)?,
            "kernel_freq" => self.kernel_freq = parse_value(key, value)?,
            "kernel_time" => self.kernel_time = parse_value(key, value)?,
            "kernel_1d" => self.kernel_1d = parse_value(key, value)?,
            "mixer_ratio" => self.mixer_ratio = parse_value(key, value)?,
            "attention" => self.attention = value.parse()?,
            "placement" => self.placement = value.parse()?,
            "se_reduction" => self.se_reduction = parse_value(key, value)?,
            "c2d_channels" => self.c2d_channels = parse_value(key, value)?,
            "classes" => self.classes = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("freq_bins", self.freq_bins.to_string()),
            ("frames", self.frames.to_string()),
            ("stem_channels", self.stem_channels.to_string()),
            ("pre_blocks", self.pre_blocks.to_string()),
            ("blocks", self.blocks.to_string()),
            ("post_blocks", self.post_blocks.to_string()),
            ("channels", self.channels.to_string()),
            ("kernel_freq", self.kernel_freq.to_string()),
            ("kernel_time", self.kernel_time.to_string()),
            ("kernel_1d", self.kernel_1d.to_string()),
            ("mixer_ratio", self.mixer_ratio.to_string()),
            ("attention", self.attention.to_string()),
            ("placement", self.placement.to_string()),
            ("se_reduction", self.se_reduction.to_string()),
            ("c2d_channels", self.c2d_channels.to_string()),
            ("classes", self.classes.to_string()),
        ]
    }
}
