use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::optim::Adam;
use super::pipeline::{clean_features, stack, Pipeline};
use super::schedule::{lr_at, EarlyStopping};
use crate::data::{curriculum_condition, stage_schedule, CurriculumStage, NoisePool, NUM_CLASSES, NUM_STAGES};
use crate::error::{Error, Result};
use crate::features::{AudioClip, FeatureExtractor, FeatureMap, MfccParams};
use crate::model::{FcaNet, Session};
use crate::numerics::{BatchNormMode, Graph, Tensor};
use crate::seed::rng_for;

/// Clips for one training run.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Vec<AudioClip>,
    pub val: Vec<AudioClip>,
    pub noise: NoisePool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Extractor whose output matches the network input.
pub fn extractor_for(net: &FcaNet) -> Result<FeatureExtractor> {
    let cfg = net.config();
    let params = MfccParams { n_mfcc: cfg.freq_bins, ..MfccParams::default() };
    if params.frames(crate::features::CLIP_SAMPLES) != cfg.frames {
        return Err(Error::config(format!(
            "network expects {} frames, one-second clips give {}",
            cfg.frames,
            params.frames(crate::features::CLIP_SAMPLES)
        )));
    }
    FeatureExtractor::new(params)
}

/// Eval-mode logits for each feature map, `batch` maps per forward pass.
pub fn predict(net: &FcaNet, features: &[FeatureMap], batch: usize) -> Result<Vec<Tensor>> {
    let chunks: Vec<&[FeatureMap]> = features.chunks(batch.max(1)).collect();
    let logits = chunks
        .par_iter()
        .map(|chunk| net.predict(&stack(chunk)?))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(features.len());
    for t in logits {
        let k = t.dims()[1];
        rows.extend(t.data().chunks(k).map(|r| Tensor::new(vec![k], r.to_vec()).expect("row")));
    }
    Ok(rows)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, v)| if *v > row[best] { i } else { best })
}

/// Top-1 accuracy in eval mode.
pub fn accuracy(net: &FcaNet, features: &[FeatureMap], labels: &[usize], batch: usize) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::arg(format!("{} feature maps for {} labels", features.len(), labels.len())));
    }
    if features.is_empty() {
        return Err(Error::config("accuracy over an empty set"));
    }
    let rows = predict(net, features, batch)?;
    let hits = rows.iter().zip(labels).filter(|(r, l)| argmax(r.data()) == **l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean cross-entropy over one batch with one-hot labels.
pub fn batch_loss(net: &FcaNet, features: &[FeatureMap], labels: &[usize], mode: BatchNormMode) -> Result<f64> {
    let mut g = Graph::new();
    let mut s = Session::frozen(&mut g, net.store(), mode);
    let x = s.graph.constant(stack(features)?);
    let logits = net.forward(&mut s, x)?;
    let loss = s.graph.softmax_cross_entropy(logits, Tensor::one_hot(labels, NUM_CLASSES)?)?;
    g.value(loss).item()
}

/// Owns the network and optimizer state for one run.
pub struct Trainer<'a> {
    pub net: FcaNet,
    pub adam: Adam,
    plan: TrainConfig,
    data: &'a TrainData,
    extractor: FeatureExtractor,
    seed: u64,
    train_clean: Vec<FeatureMap>,
    val_features: Vec<FeatureMap>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: FcaNet, plan: &TrainConfig, data: &'a TrainData, seed: u64) -> Result<Self> {
        plan.validate()?;
        if data.train.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        if data.val.is_empty() {
            return Err(Error::config("validation set is empty"));
        }
        let extractor = extractor_for(&net)?;
        let train_clean = clean_features(&extractor, &data.train)?;
        let val_features = if plan.noisy_validation {
            let pipeline = Pipeline { extractor: &extractor, noise: &data.noise, plan, seed };
            let hardest = CurriculumStage::new(NUM_STAGES - 1)?;
            data.val
                .par_iter()
                .map(|c| {
                    let mut rng = rng_for(seed, &format!("val/{}", c.source_id));
                    let cond = curriculum_condition(&hardest, &mut rng);
                    extractor.extract(&pipeline.condition(c, cond, &mut rng)?.samples)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            clean_features(&extractor, &data.val)?
        };
        let adam = Adam::new(net.store().values());
        Ok(Trainer { net, adam, plan: plan.clone(), data, extractor, seed, train_clean, val_features })
    }

    pub fn plan(&self) -> &TrainConfig {
        &self.plan
    }

    /// Cross-entropy of the clean training set at the current weights.
    pub fn clean_train_loss(&self) -> Result<f64> {
        let labels: Vec<usize> = self.data.train.iter().map(|c| c.label).collect();
        batch_loss(&self.net, &self.train_clean, &labels, BatchNormMode::Train)
    }

    /// One pass over shuffled batches of augmented clips.
    pub fn train_epoch(&mut self, epoch: usize, stage: &CurriculumStage, lr: f64) -> Result<EpochMetrics> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut rng_for(self.seed, &format!("shuffle/{epoch}")));
        let pipeline = Pipeline { extractor: &self.extractor, noise: &self.data.noise, plan: &self.plan, seed: self.seed };
        let mut total = 0.0;
        for (index, chunk) in order.chunks(self.plan.batch_size).enumerate() {
            let clips: Vec<&AudioClip> = chunk.iter().map(|&i| &self.data.train[i]).collect();
            let (x, y) = pipeline.batch(&clips, stage, epoch, index)?;

            let mut g = Graph::new();
            let (loss, vars, updates) = {
                let mut s = Session::trainable(&mut g, self.net.store(), BatchNormMode::Train);
                let xv = s.graph.constant(x);
                let logits = self.net.forward(&mut s, xv)?;
                let loss = s.graph.softmax_cross_entropy(logits, y)?;
                (loss, s.vars().to_vec(), std::mem::take(&mut s.bn_updates))
            };
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value} at epoch {epoch}, batch {index}")));
            }
            g.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).dims().to_vec())))
                .collect();
            self.adam.step_store(self.net.store_mut(), &grads, lr)?;
            self.net.store_mut().apply_bn_updates(&g, &updates)?;
            total += value * chunk.len() as f64;
        }
        let labels: Vec<usize> = self.data.train.iter().map(|c| c.label).collect();
        Ok(EpochMetrics {
            loss: total / self.data.train.len() as f64,
            accuracy: accuracy(&self.net, &self.train_clean, &labels, self.plan.batch_size)?,
        })
    }

    pub fn validate(&self) -> Result<f64> {
        let labels: Vec<usize> = self.data.val.iter().map(|c| c.label).collect();
        accuracy(&self.net, &self.val_features, &labels, self.plan.batch_size)
    }
}

/// What [`fit`] drives: one epoch of training, a validation score and a
/// serialized snapshot of the current weights.
pub trait EpochRunner {
    fn train_epoch(&mut self, epoch: usize, stage: &CurriculumStage, lr: f64) -> Result<EpochMetrics>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Result<Vec<u8>>;
}

impl EpochRunner for Trainer<'_> {
    fn train_epoch(&mut self, epoch: usize, stage: &CurriculumStage, lr: f64) -> Result<EpochMetrics> {
        Trainer::train_epoch(self, epoch, stage, lr)
    }

    fn validate(&mut self) -> Result<f64> {
        Trainer::validate(self)
    }

    fn snapshot(&self) -> Result<Vec<u8>> {
        self.net.to_checkpoint()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub stage: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

pub const HISTORY_HEADER: &str = "epoch,stage,lr,train_loss,train_acc,val_acc,seconds";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.stage, r.lr, r.train_loss, r.train_acc, r.val_acc, r.seconds
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Snapshot taken at the best validation epoch.
    pub best: Vec<u8>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<HistoryRow>,
}

/// Runs epochs `1..=max_epochs` through the curriculum until validation
/// accuracy stalls for `patience` epochs.
pub fn fit<R: EpochRunner>(runner: &mut R, plan: &TrainConfig, mut on_epoch: impl FnMut(&HistoryRow)) -> Result<FitOutcome> {
    plan.validate()?;
    let mut stopper = EarlyStopping::new(plan.patience);
    let mut best = Vec::new();
    let mut history = Vec::new();
    for epoch in 1..=plan.max_epochs {
        let started = Instant::now();
        let stage = if plan.curriculum { stage_schedule(epoch - 1, &plan.stage_lengths) } else { CurriculumStage::new(0)? };
        let lr = lr_at(epoch, plan);
        let metrics = runner.train_epoch(epoch, &stage, lr)?;
        let val = runner.validate()?;
        let verdict = stopper.observe(epoch, val);
        if verdict.improved {
            best = runner.snapshot()?;
        }
        let row = HistoryRow {
            epoch,
            stage: stage.index,
            lr,
            train_loss: metrics.loss,
            train_acc: metrics.accuracy,
            val_acc: val,
            seconds: if plan.history_timing { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&row);
        history.push(row);
        if verdict.stop {
            break;
        }
    }
    Ok(FitOutcome { best, best_epoch: stopper.best_epoch, best_val: stopper.best, history })
}
