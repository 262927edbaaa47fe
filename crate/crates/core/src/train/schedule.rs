use std::f64::consts::PI;

use super::config::{ScheduleKind, TrainConfig};

/// Learning rate for 1-based `epoch`.
pub fn lr_at(epoch: usize, plan: &TrainConfig) -> f64 {
    let epoch = epoch.max(1);
    match plan.schedule {
        ScheduleKind::StepDecay => {
            let steps = epoch.saturating_sub(plan.decay_after) / plan.decay_every;
            plan.lr0 * plan.decay_factor.powi(steps as i32)
        }
        ScheduleKind::CosineWarmRestarts => {
            let mut t_cur = epoch - 1;
            let mut period = plan.restart_period;
            while t_cur >= period {
                t_cur -= period;
                period *= plan.restart_mult;
            }
            0.5 * plan.lr0 * (1.0 + (PI * t_cur as f64 / period as f64).cos())
        }
    }
}

/// Outcome of one [`EarlyStopping::observe`] call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

/// Stops after `patience` epochs without a validation gain above `MIN_DELTA`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub const MIN_DELTA: f64 = 1e-6;

    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::NEG_INFINITY, best_epoch: 0 }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> Verdict {
        let improved = score > self.best + Self::MIN_DELTA || self.best == f64::NEG_INFINITY;
        if improved {
            self.best = score;
            self.best_epoch = epoch;
        }
        Verdict { improved, stop: epoch >= self.best_epoch + self.patience }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_table() {
        let plan = TrainConfig::default();
        assert_eq!(lr_at(1, &plan), 0.005);
        assert_eq!(lr_at(5, &plan), 0.005);
        assert_eq!(lr_at(8, &plan), 0.005);
        assert!((lr_at(9, &plan) - 0.00425).abs() < 1e-15);
        for e in 1..=50 {
            let k = if e <= 5 { 0 } else { (e - 5) / 4 };
            assert_eq!(lr_at(e, &plan), 0.005 * 0.85f64.powi(k as i32), "epoch {e}");
            assert!(lr_at(e + 1, &plan) <= lr_at(e, &plan));
        }
    }

    #[test]
    fn cosine_restarts_at_ten_then_thirty() {
        let plan = TrainConfig { schedule: ScheduleKind::CosineWarmRestarts, ..TrainConfig::default() };
        assert_eq!(lr_at(1, &plan), 0.005);
        assert!((lr_at(6, &plan) - 0.0025).abs() < 1e-15);
        assert_eq!(lr_at(11, &plan), 0.005);
        assert!((lr_at(21, &plan) - 0.0025).abs() < 1e-15);
        assert_eq!(lr_at(31, &plan), 0.005);
        for e in 1..=70 {
            let lr = lr_at(e, &plan);
            assert!(lr > 0.0 && lr <= 0.005);
        }
    }

    #[test]
    fn constant_scores_stop_after_patience() {
        let mut es = EarlyStopping::new(20);
        let mut stopped = None;
        for epoch in 1..=200 {
            let score = if epoch <= 7 { epoch as f64 * 0.1 } else { 0.7 };
            if es.observe(epoch, score).stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(es.best_epoch, 7);
        assert_eq!(stopped, Some(27));
    }

    #[test]
    fn tiny_gains_do_not_count() {
        let mut es = EarlyStopping::new(3);
        assert!(es.observe(1, 0.5).improved);
        assert!(!es.observe(2, 0.5 + 1e-7).improved);
        assert!(es.observe(3, 0.5 + 2e-6).improved);
        assert_eq!(es.best_epoch, 3);
    }
}
