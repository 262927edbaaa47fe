use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::manifest::NoisePool;
use super::mixing::{mix_at_snr, MixCondition, Mixture};
use crate::error::{Error, Result};
use crate::features::{AudioClip, CLIP_SAMPLES};
use crate::seed::{rng_for, sha256_hex};

/// Test conditions, in report order.
pub const EVAL_CONDITIONS: [MixCondition; 5] = [
    MixCondition::Clean,
    MixCondition::Snr(20.0),
    MixCondition::Snr(0.0),
    MixCondition::Snr(-5.0),
    MixCondition::Snr(-10.0),
];

const MAGIC: &[u8; 4] = b"FCAE";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub condition: MixCondition,
    pub clips: Vec<AudioClip>,
}

/// The noisy version of one test clip. The noise draw depends only on
/// `(seed, clip id, snr)`.
pub fn eval_mixture(clip: &AudioClip, noise: &NoisePool, snr_db: f64, seed: u64) -> Result<Mixture> {
    let mut rng = rng_for(seed, &format!("eval/{}/{snr_db}", clip.source_id));
    let source = noise.pick(&mut rng)?;
    mix_at_snr(clip, source, snr_db, &mut rng)
}

/// One clean and four noisy copies of `test`.
pub fn build_eval_sets(test: &[AudioClip], noise: &NoisePool, seed: u64) -> Result<Vec<EvalSet>> {
    if noise.is_empty() {
        return Err(Error::config("eval sets need a noise corpus"));
    }
    EVAL_CONDITIONS
        .iter()
        .map(|&condition| {
            let clips = match condition {
                MixCondition::Clean => test.to_vec(),
                MixCondition::Snr(db) => test
                    .iter()
                    .map(|c| Ok(eval_mixture(c, noise, db, seed)?.into_clip(c)))
                    .collect::<Result<_>>()?,
            };
            Ok(EvalSet { condition, clips })
        })
        .collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("eval set truncated".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("eval set string is not UTF-8".into()))
    }
}

impl EvalSet {
    /// File name stem, e.g. `clean` or `snr_-5`.
    pub fn file_stem(&self) -> String {
        match self.condition {
            MixCondition::Clean => "clean".into(),
            MixCondition::Snr(db) => format!("snr_{db}"),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.clips.len() * (CLIP_SAMPLES * 4 + 32) + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.condition.label())?;
        put_u32(&mut out, self.clips.len())?;
        for clip in &self.clips {
            put_u32(&mut out, clip.label)?;
            put_str(&mut out, &clip.source_id)?;
            put_u32(&mut out, clip.samples.len())?;
            for s in &clip.samples {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor(bytes);
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("not an eval set file".into()));
        }
        let version = cur.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported eval set version {version}")));
        }
        let label = cur.string()?;
        let condition = match label.as_str() {
            "clean" => MixCondition::Clean,
            db => MixCondition::Snr(db.parse().map_err(|_| Error::Format(format!("bad condition '{db}'")))?),
        };
        let n = cur.u32()?;
        let mut clips = Vec::with_capacity(n);
        for _ in 0..n {
            let label = cur.u32()?;
            let id = cur.string()?;
            let len = cur.u32()?;
            let samples = cur
                .take(len * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            clips.push(AudioClip::new(samples, label, id));
        }
        if !cur.0.is_empty() {
            return Err(Error::Format("trailing bytes after eval set".into()));
        }
        Ok(EvalSet { condition, clips })
    }

    /// SHA-256 of the serialized set.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    /// Writes `<dir>/<stem>.bin` and returns the digest.
    pub fn write(&self, dir: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::create_dir_all(dir)?;
        fs::File::create(dir.join(format!("{}.bin", self.file_stem())))?.write_all(&bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::config(format!("cannot open eval set {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        EvalSet::from_bytes(&bytes)
    }
}

/// Reads the five sets written by [`EvalSet::write`] in report order.
pub fn read_eval_sets(dir: &Path) -> Result<Vec<EvalSet>> {
    EVAL_CONDITIONS
        .iter()
        .map(|&condition| {
            let stem = EvalSet { condition, clips: vec![] }.file_stem();
            let set = EvalSet::read(&dir.join(format!("{stem}.bin")))?;
            if set.condition != condition {
                return Err(Error::Format(format!("{stem}.bin holds condition {}", set.condition)));
            }
            Ok(set)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_clips() -> Vec<AudioClip> {
        (0..6)
            .map(|k| {
                let samples = (0..CLIP_SAMPLES).map(|i| 0.3 * ((i * (k + 1)) as f32 * 0.01).sin()).collect();
                AudioClip::new(samples, k % 12, format!("w/{k}_nohash_0.wav"))
            })
            .collect()
    }

    fn pool() -> NoisePool {
        let hum = (0..40_000).map(|i| 0.05 * ((i as f32) * 0.37).sin() + 0.01 * ((i % 7) as f32)).collect();
        let short = (0..5_000).map(|i| ((i % 13) as f32 - 6.0) * 0.02).collect();
        NoisePool { files: vec![hum, short] }
    }

    #[test]
    fn sets_are_reproducible_and_exact() {
        let clips = test_clips();
        let a = build_eval_sets(&clips, &pool(), 9).unwrap();
        let b = build_eval_sets(&clips, &pool(), 9).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a[0].clips, clips);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.digest().unwrap(), y.digest().unwrap());
        }
        let other = build_eval_sets(&clips, &pool(), 10).unwrap();
        assert_ne!(a[2].digest().unwrap(), other[2].digest().unwrap());
        for &db in &[20.0, 0.0, -5.0, -10.0] {
            for c in &clips {
                let m = eval_mixture(c, &pool(), db, 9).unwrap();
                assert!((m.snr_db() - db).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn missing_noise_is_a_config_error() {
        assert!(matches!(build_eval_sets(&test_clips(), &NoisePool::default(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sets = build_eval_sets(&test_clips(), &pool(), 1).unwrap();
        for s in &sets {
            let digest = s.write(dir.path()).unwrap();
            assert_eq!(digest, s.digest().unwrap());
        }
        assert_eq!(read_eval_sets(dir.path()).unwrap(), sets);
        let mut bytes = sets[1].to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(EvalSet::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(EvalSet::from_bytes(b"RIFF0000"), Err(Error::Format(_))));
    }
}
