//! Adam, learning-rate schedules, early stopping and the epoch loop that
//! feeds curriculum-conditioned batches to the network.

mod config;
mod optim;
mod pipeline;
mod schedule;
mod trainer;

pub use config::{ScheduleKind, TrainConfig};
pub use optim::Adam;
pub use pipeline::{clean_features, stack, Pipeline};
pub use schedule::{lr_at, EarlyStopping, Verdict};
pub use trainer::{
    accuracy, batch_loss, extractor_for, fit, history_csv, predict, EpochMetrics, EpochRunner, FitOutcome, HistoryRow,
    TrainData, Trainer, HISTORY_HEADER,
};
