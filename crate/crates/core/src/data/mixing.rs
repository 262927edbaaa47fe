use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{mean_square, AudioClip, CLIP_SAMPLES};

/// How a training or evaluation clip is corrupted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixCondition {
    Clean,
    Snr(f64),
}

impl MixCondition {
    /// `clean` or the SNR in dB, e.g. `-5`.
    pub fn label(&self) -> String {
        match self {
            MixCondition::Clean => "clean".to_string(),
            MixCondition::Snr(db) => format!("{db}"),
        }
    }
}

impl std::fmt::Display for MixCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MixCondition::Clean => write!(f, "clean"),
            MixCondition::Snr(db) => write!(f, "{db} dB"),
        }
    }
}

/// Speech plus scaled noise, kept as separate components so the achieved
/// SNR can be measured.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub speech: Vec<f64>,
    /// Noise segment already multiplied by `gain`.
    pub noise: Vec<f64>,
    pub gain: f64,
    /// Joint factor applied to both components when the sum would clip.
    pub rescale: f64,
}

impl Mixture {
    /// SNR of the stored components in dB, before the joint rescale.
    pub fn snr_db(&self) -> f64 {
        10.0 * (mean_square(self.speech.iter().copied()) / mean_square(self.noise.iter().copied())).log10()
    }

    pub fn samples(&self) -> Vec<f32> {
        self.speech.iter().zip(&self.noise).map(|(s, n)| ((s + n) * self.rescale) as f32).collect()
    }

    pub fn into_clip(self, template: &AudioClip) -> AudioClip {
        AudioClip { samples: self.samples(), ..template.clone() }
    }
}

/// A one-second window of `noise` starting at `offset`, wrapping around
/// files shorter than a second.
pub fn noise_segment(noise: &[f32], offset: usize) -> Vec<f64> {
    (0..CLIP_SAMPLES).map(|i| noise[(offset + i) % noise.len()] as f64).collect()
}

pub fn random_noise_segment<R: Rng + ?Sized>(noise: &[f32], rng: &mut R) -> Vec<f64> {
    let offset = if noise.len() >= CLIP_SAMPLES {
        rng.gen_range(0..=noise.len() - CLIP_SAMPLES)
    } else {
        rng.gen_range(0..noise.len())
    };
    noise_segment(noise, offset)
}

const SEGMENT_RETRIES: usize = 10;

/// Adds a random one-second segment of `noise` to `speech` at `snr_db`.
///
/// Gain is `sqrt(P_s / (P_n 10^(snr/10)))` with powers as mean squares over
/// the clip. If the sum would leave `[-1, 1]` both components are scaled by
/// the same factor, which leaves the SNR unchanged.
pub fn mix_at_snr<R: Rng + ?Sized>(speech: &AudioClip, noise: &[f32], snr_db: f64, rng: &mut R) -> Result<Mixture> {
    if speech.samples.len() != CLIP_SAMPLES {
        return Err(Error::arg(format!("speech clip {} is not padded to one second", speech.source_id)));
    }
    if noise.is_empty() {
        return Err(Error::data("empty noise source"));
    }
    let p_speech = speech.power();
    if p_speech <= 0.0 {
        return Err(Error::data(format!("speech clip {} is silent", speech.source_id)));
    }
    for _ in 0..SEGMENT_RETRIES {
        let segment = random_noise_segment(noise, rng);
        let p_noise = mean_square(segment.iter().copied());
        if p_noise <= 0.0 {
            continue;
        }
        let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        let speech: Vec<f64> = speech.samples.iter().map(|&s| s as f64).collect();
        let noise: Vec<f64> = segment.iter().map(|n| gain * n).collect();
        let peak = speech.iter().zip(&noise).map(|(s, n)| (s + n).abs()).fold(0.0, f64::max);
        let rescale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
        return Ok(Mixture { speech, noise, gain, rescale });
    }
    Err(Error::data(format!("no audible noise segment after {SEGMENT_RETRIES} draws")))
}
