use rand::Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use crate::data::{curriculum_condition, mix_at_snr, mixup, CurriculumStage, MixCondition, NoisePool, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::{spec_mask, time_shift, AudioClip, FeatureExtractor, FeatureMap};
use crate::numerics::Tensor;
use crate::seed::rng_for;

/// Stacks `[C, F, T]` maps into `[N, C, F, T]`.
pub fn stack(features: &[FeatureMap]) -> Result<Tensor> {
    let first = features.first().ok_or_else(|| Error::arg("cannot stack an empty batch"))?;
    let dims = first.tensor().dims().to_vec();
    let mut data = Vec::with_capacity(features.len() * first.tensor().numel());
    for f in features {
        if f.tensor().dims() != dims.as_slice() {
            return Err(Error::shape(format!("feature map {:?} in a batch of {dims:?}", f.tensor().dims())));
        }
        data.extend_from_slice(f.tensor().data());
    }
    let mut out_dims = vec![features.len()];
    out_dims.extend(dims);
    Tensor::new(out_dims, data)
}

/// MFCC maps of unaugmented clips, in order.
pub fn clean_features(extractor: &FeatureExtractor, clips: &[AudioClip]) -> Result<Vec<FeatureMap>> {
    clips.par_iter().map(|c| extractor.extract(&c.samples)).collect()
}

/// Per-item training transforms and batch assembly. Every random draw comes
/// from a stream keyed by the seed, epoch and clip id, so the result does
/// not depend on thread count.
pub struct Pipeline<'a> {
    pub extractor: &'a FeatureExtractor,
    pub noise: &'a NoisePool,
    pub plan: &'a TrainConfig,
    pub seed: u64,
}

impl Pipeline<'_> {
    /// Adds noise for `condition` unless the clip is silent.
    pub fn condition(&self, clip: &AudioClip, condition: MixCondition, rng: &mut impl Rng) -> Result<AudioClip> {
        match condition {
            MixCondition::Clean => Ok(clip.clone()),
            MixCondition::Snr(_) if clip.power() == 0.0 => Ok(clip.clone()),
            MixCondition::Snr(db) => {
                if self.noise.is_empty() {
                    return Err(Error::config(format!("condition {condition} needs a noise corpus")));
                }
                let source = self.noise.pick(rng)?;
                Ok(mix_at_snr(clip, source, db, rng)?.into_clip(clip))
            }
        }
    }

    /// condition, mix, time shift, MFCC, spectrogram mask.
    pub fn augment(&self, clip: &AudioClip, stage: &CurriculumStage, epoch: usize) -> Result<FeatureMap> {
        let mut rng = rng_for(self.seed, &format!("train/{epoch}/{}", clip.source_id));
        let condition = curriculum_condition(stage, &mut rng);
        let noisy = self.condition(clip, condition, &mut rng)?;
        let max = self.plan.max_shift_ms;
        let shift = if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
        let shifted = time_shift(&noisy, shift)?;
        let feat = self.extractor.extract(&shifted.samples)?;
        Ok(if self.plan.spec_mask { spec_mask(&feat, &mut rng).0 } else { feat })
    }

    /// Features `[N, 1, F, T]` and label weights `[N, K]` for one batch.
    pub fn batch(&self, clips: &[&AudioClip], stage: &CurriculumStage, epoch: usize, index: usize) -> Result<(Tensor, Tensor)> {
        let feats = clips.par_iter().map(|c| self.augment(c, stage, epoch)).collect::<Result<Vec<_>>>()?;
        let x = stack(&feats)?;
        let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
        let y = Tensor::one_hot(&labels, NUM_CLASSES)?;
        if !self.plan.mixup {
            return Ok((x, y));
        }
        let mut rng = rng_for(self.seed, &format!("mixup/{epoch}/{index}"));
        let (x, y, _) = mixup(&x, &y, self.plan.mixup_alpha, &mut rng)?;
        Ok((x, y))
    }
}
