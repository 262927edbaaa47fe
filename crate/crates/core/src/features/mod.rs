//! Audio front end: 16 kHz clips to 40-coefficient MFCC maps, plus the
//! waveform and spectrogram augmentations used in training.

mod augment;
mod mfcc;
mod wav;

pub use augment::{pad_or_trim, spec_mask, spec_mask_with, time_shift, MaskSpan, MAX_MASK_WIDTH, MAX_SHIFT_MS};
pub use mfcc::{FeatureExtractor, MfccParams};
pub use wav::{read_wav, write_wav};

use crate::numerics::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
/// One second of audio.
pub const CLIP_SAMPLES: usize = 16_000;

/// A mono clip at [`SAMPLE_RATE`].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub label: usize,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, label: usize, source_id: impl Into<String>) -> Self {
        AudioClip { samples, label, source_id: source_id.into() }
    }

    /// Mean square over all samples.
    pub fn power(&self) -> f64 {
        mean_square(self.samples.iter().map(|&s| s as f64))
    }
}

pub(crate) fn mean_square(samples: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    samples.map(|s| s * s).sum::<f64>() / n as f64
}

/// MFCC map of shape `[C, F, T]` as fed to the network.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap(pub Tensor);

impl FeatureMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn freq_bins(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn frames(&self) -> usize {
        self.0.dims()[2]
    }
}
