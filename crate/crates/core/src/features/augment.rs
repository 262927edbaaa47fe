use rand::Rng;

use super::{AudioClip, FeatureMap, CLIP_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MAX_SHIFT_MS: f64 = 100.0;
/// Widest time or frequency stripe masked by [`spec_mask`].
pub const MAX_MASK_WIDTH: usize = 25;

/// Right-pads with zeros or truncates to exactly one second.
pub fn pad_or_trim(clip: &AudioClip) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(Error::arg(format!("clip {} has no samples", clip.source_id)));
    }
    let mut samples = clip.samples.clone();
    samples.resize(CLIP_SAMPLES, 0.0);
    Ok(AudioClip { samples, ..clip.clone() })
}

/// Delays (positive) or advances (negative) the clip by `shift_ms`,
/// zero-filling the vacated samples.
pub fn time_shift(clip: &AudioClip, shift_ms: f64) -> Result<AudioClip> {
    if shift_ms.is_nan() || shift_ms.abs() > MAX_SHIFT_MS {
        return Err(Error::arg(format!("time shift {shift_ms} ms outside ±{MAX_SHIFT_MS} ms")));
    }
    let n = clip.samples.len();
    let shift = (shift_ms * SAMPLE_RATE as f64 / 1000.0).round() as isize;
    let samples = (0..n as isize)
        .map(|i| {
            let src = i - shift;
            if src >= 0 && src < n as isize {
                clip.samples[src as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioClip { samples, ..clip.clone() })
}

/// A masked stripe `[start, start + width)` along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpan {
    pub start: usize,
    pub width: usize,
}

impl MaskSpan {
    fn draw<R: Rng + ?Sized>(axis: usize, rng: &mut R) -> Self {
        let width = rng.gen_range(0..=MAX_MASK_WIDTH).min(axis);
        let start = rng.gen_range(0..=axis - width);
        MaskSpan { start, width }
    }

    fn covers(&self, i: usize) -> bool {
        i >= self.start && i < self.start + self.width
    }
}

/// Zeroes the given frequency and time stripes across all channels.
pub fn spec_mask_with(feat: &FeatureMap, freq: MaskSpan, time: MaskSpan) -> FeatureMap {
    let (f, t) = (feat.freq_bins(), feat.frames());
    let mut out = feat.0.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let (bin, frame) = ((i / t) % f, i % t);
        if freq.covers(bin) || time.covers(frame) {
            *v = 0.0;
        }
    }
    FeatureMap(out)
}

/// One random frequency stripe and one random time stripe, each of width
/// uniform in `0..=25` clamped to the axis.
pub fn spec_mask<R: Rng + ?Sized>(feat: &FeatureMap, rng: &mut R) -> (FeatureMap, MaskSpan, MaskSpan) {
    let time = MaskSpan::draw(feat.frames(), rng);
    let freq = MaskSpan::draw(feat.freq_bins(), rng);
    (spec_mask_with(feat, freq, time), freq, time)
}
