use std::fmt;
use std::str::FromStr;

use crate::config::{parse_value, Settings};
use crate::data::{MIXUP_ALPHA, NUM_STAGES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `lr0 * factor^floor(max(0, epoch - after) / every)`.
    StepDecay,
    /// Cosine from `lr0` to zero, restarting after periods that grow
    /// geometrically.
    CosineWarmRestarts,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::StepDecay => "step_decay",
            ScheduleKind::CosineWarmRestarts => "cosine_warm_restarts",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step_decay" => Ok(ScheduleKind::StepDecay),
            "cosine_warm_restarts" => Ok(ScheduleKind::CosineWarmRestarts),
            other => Err(Error::config(format!("unknown schedule '{other}'"))),
        }
    }
}

/// Optimizer, schedule and augmentation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: ScheduleKind,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub decay_after: usize,
    pub restart_period: usize,
    pub restart_mult: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Epochs spent in each curriculum stage; the last stage runs until
    /// training ends whatever its length says.
    pub stage_lengths: [usize; NUM_STAGES],
    /// When off every sample stays clean.
    pub curriculum: bool,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub spec_mask: bool,
    pub max_shift_ms: f64,
    /// Validate on noisy copies of the validation clips instead of clean ones.
    pub noisy_validation: bool,
    /// Record wall-clock seconds per epoch in the history; off keeps the
    /// history byte-stable across runs.
    pub history_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr0: 0.005,
            schedule: ScheduleKind::StepDecay,
            decay_factor: 0.85,
            decay_every: 4,
            decay_after: 5,
            restart_period: 10,
            restart_mult: 2,
            max_epochs: 200,
            patience: 20,
            stage_lengths: [10, 10, 10, 170],
            curriculum: true,
            mixup: true,
            mixup_alpha: MIXUP_ALPHA,
            spec_mask: true,
            max_shift_ms: 100.0,
            noisy_validation: false,
            history_timing: false,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid value '{value}' for {key}, expected true or false"))),
    }
}

impl Settings for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr0" => self.lr0 = parse_value(key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "decay_factor" => self.decay_factor = parse_value(key, value)?,
            "decay_every" => self.decay_every = parse_value(key, value)?,
            "decay_after" => self.decay_after = parse_value(key, value)?,
            "restart_period" => self.restart_period = parse_value(key, value)?,
            "restart_mult" => self.restart_mult = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "stage_lengths" => {
                let parts = value.split(',').map(|p| parse_value(key, p.trim())).collect::<Result<Vec<usize>>>()?;
                self.stage_lengths = parts
                    .try_into()
                    .map_err(|_| Error::config(format!("stage_lengths needs {NUM_STAGES} comma-separated counts")))?;
            }
            "curriculum" => self.curriculum = parse_bool(key, value)?,
            "mixup" => self.mixup = parse_bool(key, value)?,
            "mixup_alpha" => self.mixup_alpha = parse_value(key, value)?,
            "spec_mask" => self.spec_mask = parse_bool(key, value)?,
            "max_shift_ms" => self.max_shift_ms = parse_value(key, value)?,
            "noisy_validation" => self.noisy_validation = parse_bool(key, value)?,
            "history_timing" => self.history_timing = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let lengths: Vec<String> = self.stage_lengths.iter().map(usize::to_string).collect();
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("schedule", self.schedule.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("decay_after", self.decay_after.to_string()),
            ("restart_period", self.restart_period.to_string()),
            ("restart_mult", self.restart_mult.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("stage_lengths", lengths.join(",")),
            ("curriculum", self.curriculum.to_string()),
            ("mixup", self.mixup.to_string()),
            ("mixup_alpha", self.mixup_alpha.to_string()),
            ("spec_mask", self.spec_mask.to_string()),
            ("max_shift_ms", self.max_shift_ms.to_string()),
            ("noisy_validation", self.noisy_validation.to_string()),
            ("history_timing", self.history_timing.to_string()),
        ]
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("decay_every", self.decay_every),
            ("restart_period", self.restart_period),
            ("restart_mult", self.restart_mult),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.stage_lengths.contains(&0) {
            return Err(Error::config("stage_lengths must all be positive"));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!("decay_factor {} outside (0, 1]", self.decay_factor)));
        }
        if !(self.mixup_alpha.is_finite() && self.mixup_alpha > 0.0) {
            return Err(Error::config(format!("mixup_alpha must be positive, got {}", self.mixup_alpha)));
        }
        if !(0.0..=crate::features::MAX_SHIFT_MS).contains(&self.max_shift_ms) {
            return Err(Error::config(format!("max_shift_ms {} outside [0, 100]", self.max_shift_ms)));
        }
        Ok(())
    }
}
