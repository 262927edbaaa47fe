//! The 12-label task, SNR-exact noise mixing, the curriculum schedule and
//! batch-level mixup.

mod curriculum;
mod evalset;
mod labels;
mod manifest;
mod mixing;
mod mixup;

pub use curriculum::{curriculum_condition, stage_schedule, CurriculumStage, NUM_STAGES};
pub use evalset::{build_eval_sets, eval_mixture, read_eval_sets, EvalSet, EVAL_CONDITIONS};
pub use labels::{build_label, class_id, class_name, CLASSES, NUM_CLASSES, SILENCE, SILENCE_MARKER, UNKNOWN, VOCABULARY};
pub use manifest::{
    hashed_split, load_split, source_id, Manifest, ManifestEntry, NoiseEntry, NoisePool, Split, MANIFEST_FILE, NOISE_FILE,
};
pub use mixing::{mix_at_snr, noise_segment, random_noise_segment, MixCondition, Mixture};
pub use mixup::{mixup, mixup_with, MIXUP_ALPHA};
