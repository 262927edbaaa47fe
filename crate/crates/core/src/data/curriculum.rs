use rand::Rng;

use super::mixing::MixCondition;
use crate::error::{Error, Result};

/// One step of the noisy curriculum: the pool of conditions training
/// samples are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumStage {
    pub index: usize,
    pub pool: Vec<MixCondition>,
}

pub const NUM_STAGES: usize = 4;

impl CurriculumStage {
    /// Stage `index`: clean only, then 0 dB, -5 dB and -10 dB are added one
    /// per stage.
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_STAGES {
            return Err(Error::arg(format!("curriculum stage {index} out of range 0..{NUM_STAGES}")));
        }
        let pool = [MixCondition::Clean, MixCondition::Snr(0.0), MixCondition::Snr(-5.0), MixCondition::Snr(-10.0)]
            [..=index]
            .to_vec();
        Ok(CurriculumStage { index, pool })
    }

    pub fn all() -> Vec<CurriculumStage> {
        (0..NUM_STAGES).map(|i| CurriculumStage::new(i).expect("in range")).collect()
    }

    pub fn is_clean_only(&self) -> bool {
        self.pool.iter().all(|c| *c == MixCondition::Clean)
    }
}

/// Uniform draw from the stage's pool.
pub fn curriculum_condition<R: Rng + ?Sized>(stage: &CurriculumStage, rng: &mut R) -> MixCondition {
    stage.pool[rng.gen_range(0..stage.pool.len())]
}

/// Stage for a 0-based epoch index. The first three lengths bound stages
/// 0..=2; the final stage runs for every remaining epoch.
pub fn stage_schedule(epoch: usize, stage_lengths: &[usize; NUM_STAGES]) -> CurriculumStage {
    let mut end = 0;
    for (index, len) in stage_lengths[..NUM_STAGES - 1].iter().enumerate() {
        end += len;
        if epoch < end {
            return CurriculumStage::new(index).expect("in range");
        }
    }
    CurriculumStage::new(NUM_STAGES - 1).expect("in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pools_are_exact() {
        use MixCondition::*;
        let pools: Vec<_> = CurriculumStage::all().into_iter().map(|s| s.pool).collect();
        assert_eq!(
            pools,
            vec![
                vec![Clean],
                vec![Clean, Snr(0.0)],
                vec![Clean, Snr(0.0), Snr(-5.0)],
                vec![Clean, Snr(0.0), Snr(-5.0), Snr(-10.0)],
            ]
        );
        assert!(CurriculumStage::new(4).is_err());
    }

    #[test]
    fn early_stages_never_draw_hard_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s0 = CurriculumStage::new(0).unwrap();
        let s1 = CurriculumStage::new(1).unwrap();
        for _ in 0..2000 {
            assert_eq!(curriculum_condition(&s0, &mut rng), MixCondition::Clean);
            let c = curriculum_condition(&s1, &mut rng);
            assert!(c != MixCondition::Snr(-5.0) && c != MixCondition::Snr(-10.0));
        }
    }

    #[test]
    fn schedule_examples() {
        let lengths = [10, 10, 10, usize::MAX];
        assert_eq!(stage_schedule(0, &lengths).index, 0);
        assert_eq!(stage_schedule(25, &lengths).index, 2);
        assert_eq!(stage_schedule(30, &lengths).index, 3);
        let mut last = 0;
        for e in 0..200 {
            let s = stage_schedule(e, &[3, 1, 7, 1]).index;
            assert!(s >= last);
            last = s;
        }
        assert_eq!(last, 3);
    }
}
