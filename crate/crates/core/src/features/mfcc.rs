use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureMap, CLIP_SAMPLES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Front-end settings. Defaults are the 40-coefficient, 64-band setup.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccParams {
    pub sample_rate: u32,
    pub n_mfcc: usize,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MfccParams {
    fn default() -> Self {
        MfccParams { sample_rate: 16_000, n_mfcc: 40, n_fft: 400, hop_length: 160, n_mels: 64, f_min: 20.0, f_max: 8000.0 }
    }
}

impl MfccParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::config(format!("n_mfcc {} must be in 1..=n_mels ({})", self.n_mfcc, self.n_mels)));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::config(format!(
                "need 0 <= f_min < f_max <= sample_rate / 2, got f_min {} f_max {}",
                self.f_min, self.f_max
            )));
        }
        if self.n_fft < 2 || self.hop_length == 0 {
            return Err(Error::config("n_fft must be >= 2 and hop_length positive"));
        }
        if self.n_fft / 2 >= CLIP_SAMPLES {
            return Err(Error::config("n_fft too large for one-second clips"));
        }
        Ok(())
    }

    /// Frames produced by the centered STFT for `n` samples.
    pub fn frames(&self, n: usize) -> usize {
        n / self.hop_length + 1
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Triangular HTK-scale filters with unit peak, `[n_mels][n_freqs]`.
fn mel_filterbank(p: &MfccParams) -> Vec<Vec<f64>> {
    let n_freqs = p.n_freqs();
    let (lo, hi) = (hz_to_mel(p.f_min), hz_to_mel(p.f_max));
    let edges: Vec<f64> = (0..p.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (p.n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * p.sample_rate as f64 / p.n_fft as f64;
    (0..p.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_freqs)
                .map(|k| {
                    let f = bin_hz(k);
                    let rise = (f - left) / (center - left);
                    let fall = (right - f) / (right - center);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, `[n_out][n_in]`.
fn dct_matrix(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
            (0..n_in).map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos()).collect()
        })
        .collect()
}

/// Precomputed window, filterbank, DCT basis and FFT plan.
///
/// Extraction is a pure function of the input samples; an extractor can be
/// shared across threads.
pub struct FeatureExtractor {
    params: MfccParams,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("params", &self.params).finish_non_exhaustive()
    }
}

impl FeatureExtractor {
    /// Floor added to mel energies before the logarithm.
    pub const LOG_FLOOR: f64 = 1e-10;

    pub fn new(params: MfccParams) -> Result<Self> {
        params.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        Ok(FeatureExtractor {
            window: hann(params.n_fft),
            filters: mel_filterbank(&params),
            dct: dct_matrix(params.n_mels, params.n_mfcc),
            fft,
            params,
        })
    }

    pub fn params(&self) -> &MfccParams {
        &self.params
    }

    /// Center frequency in Hz of each mel filter.
    pub fn filter_centers(&self) -> Vec<f64> {
        let p = &self.params;
        let (lo, hi) = (hz_to_mel(p.f_min), hz_to_mel(p.f_max));
        (1..=p.n_mels).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (p.n_mels + 1) as f64)).collect()
    }

    /// One-sided power spectrum `|X_k|^2`, `k = 0..=n_fft/2`, of a single
    /// Hann-windowed frame of exactly `n_fft` samples.
    pub fn frame_power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.params.n_fft {
            return Err(Error::arg(format!("frame has {} samples, expected {}", frame.len(), self.params.n_fft)));
        }
        let mut buf: Vec<Complex<f64>> =
            frame.iter().zip(&self.window).map(|(x, w)| Complex::new(x * w, 0.0)).collect();
        self.fft.process(&mut buf);
        Ok(buf[..self.params.n_freqs()].iter().map(|c| c.norm_sqr()).collect())
    }

    /// Reflect-padded signal used by the centered STFT.
    fn reflect_pad(&self, samples: &[f64]) -> Vec<f64> {
        let pad = self.params.n_fft / 2;
        let n = samples.len();
        let mut out = Vec::with_capacity(n + 2 * pad);
        out.extend((1..=pad).rev().map(|i| samples[i]));
        out.extend_from_slice(samples);
        out.extend((0..pad).map(|i| samples[n - 2 - i]));
        out
    }

    /// Mel energies `[n_mels, T]` of a one-second clip.
    pub fn mel_spectrogram(&self, samples: &[f32]) -> Result<Tensor> {
        if samples.len() != CLIP_SAMPLES {
            return Err(Error::arg(format!("clip has {} samples, pad or trim to {CLIP_SAMPLES} first", samples.len())));
        }
        let p = &self.params;
        let signal: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
        let padded = self.reflect_pad(&signal);
        let frames = p.frames(samples.len());
        let mut mel = vec![0.0; p.n_mels * frames];
        for t in 0..frames {
            let start = t * p.hop_length;
            let power = self.frame_power_spectrum(&padded[start..start + p.n_fft])?;
            for (m, filter) in self.filters.iter().enumerate() {
                mel[m * frames + t] = filter.iter().zip(&power).map(|(w, e)| w * e).sum();
            }
        }
        Tensor::new(vec![p.n_mels, frames], mel)
    }

    /// `DCT-II(log(mel + floor))` over the mel axis, first `n_mfcc` rows.
    pub fn mfcc(&self, mel: &Tensor) -> Result<Tensor> {
        let p = &self.params;
        if mel.rank() != 2 || mel.dims()[0] != p.n_mels {
            return Err(Error::shape(format!("mel spectrogram dims {:?}, expected [{}, T]", mel.dims(), p.n_mels)));
        }
        if mel.data().iter().any(|v| *v < 0.0 || v.is_nan()) {
            return Err(Error::arg("mel energies must be non-negative"));
        }
        let frames = mel.dims()[1];
        let logs: Vec<f64> = mel.data().iter().map(|v| (v + Self::LOG_FLOOR).ln()).collect();
        let mut out = vec![0.0; p.n_mfcc * frames];
        for (k, basis) in self.dct.iter().enumerate() {
            for t in 0..frames {
                out[k * frames + t] = basis.iter().enumerate().map(|(m, b)| b * logs[m * frames + t]).sum();
            }
        }
        Tensor::new(vec![p.n_mfcc, frames], out)
    }

    /// Single-channel feature map `[1, n_mfcc, T]`.
    pub fn extract(&self, samples: &[f32]) -> Result<FeatureMap> {
        let coeffs = self.mfcc(&self.mel_spectrogram(samples)?)?;
        let dims = vec![1, coeffs.dims()[0], coeffs.dims()[1]];
        Ok(FeatureMap(coeffs.reshape(dims)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn extractor() -> FeatureExtractor {
        FeatureExtractor::new(MfccParams::default()).unwrap()
    }

    #[test]
    fn shapes_follow_the_framing() {
        let fx = extractor();
        let clip = vec![0.1f32; CLIP_SAMPLES];
        let mel = fx.mel_spectrogram(&clip).unwrap();
        assert_eq!(mel.dims(), &[64, 101]);
        assert_eq!(fx.mfcc(&mel).unwrap().dims(), &[40, 101]);
        assert_eq!(fx.extract(&clip).unwrap().tensor().dims(), &[1, 40, 101]);
    }

    #[test]
    fn silence_gives_zero_energy_and_finite_coefficients() {
        let fx = extractor();
        let zeros = vec![0.0f32; CLIP_SAMPLES];
        let mel = fx.mel_spectrogram(&zeros).unwrap();
        assert!(mel.data().iter().all(|v| *v == 0.0));
        assert!(fx.mfcc(&mel).unwrap().is_finite());
    }

    #[test]
    fn sine_peaks_in_nearest_filter() {
        let fx = extractor();
        let clip: Vec<f32> =
            (0..CLIP_SAMPLES).map(|i| (0.5 * (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin()) as f32).collect();
        let mel = fx.mel_spectrogram(&clip).unwrap();
        let frame = 50;
        let argmax = (0..64).max_by(|&a, &b| mel.data()[a * 101 + frame].total_cmp(&mel.data()[b * 101 + frame])).unwrap();
        let centers = fx.filter_centers();
        let nearest = (0..64).min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs())).unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn constant_mel_plane_has_only_dc_coefficient() {
        let fx = extractor();
        let mel = Tensor::full(vec![64, 5], 3.0);
        let c = fx.mfcc(&mel).unwrap();
        let dc = (3.0f64 + 1e-10).ln() * 8.0; // sqrt(64) * log value
        for t in 0..5 {
            assert!((c.data()[t] - dc).abs() < 1e-12);
            for k in 1..40 {
                assert!(c.data()[k * 5 + t].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_negative_mel_energy() {
        let fx = extractor();
        let mut mel = Tensor::full(vec![64, 2], 1.0);
        mel.data_mut()[3] = -1e-3;
        assert!(matches!(fx.mfcc(&mel), Err(Error::Argument(_))));
    }

    #[test]
    fn parseval_on_windowed_frames() {
        let fx = extractor();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let win = hann(400);
        for _ in 0..20 {
            let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = fx.frame_power_spectrum(&frame).unwrap();
            let spectral = (p[0] + p[200] + 2.0 * p[1..200].iter().sum::<f64>()) / 400.0;
            let direct: f64 = frame.iter().zip(&win).map(|(x, w)| (x * w).powi(2)).sum();
            assert!((spectral - direct).abs() <= 1e-6 * direct);
        }
    }

    #[test]
    fn dct_matches_direct_summation() {
        let fx = extractor();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mel = Tensor::from_fn(vec![64, 1], |_| rng.gen_range(0.0..10.0));
        let c = fx.mfcc(&mel).unwrap();
        let logs: Vec<f64> = mel.data().iter().map(|v| (v + 1e-10).ln()).collect();
        for k in 0..40 {
            let mut acc = 0.0;
            for (n, l) in logs.iter().enumerate() {
                acc += l * (PI / 64.0 * (n as f64 + 0.5) * k as f64).cos();
            }
            let norm = if k == 0 { (1.0f64 / 64.0).sqrt() } else { (2.0f64 / 64.0).sqrt() };
            assert!((c.data()[k] - norm * acc).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad = MfccParams { n_mfcc: 65, ..MfccParams::default() };
        assert!(matches!(FeatureExtractor::new(bad), Err(Error::Config(_))));
        let bad = MfccParams { f_max: 9000.0, ..MfccParams::default() };
        assert!(matches!(FeatureExtractor::new(bad), Err(Error::Config(_))));
    }
}
