use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::labels::{build_label, class_id, class_name, SILENCE, SILENCE_MARKER};
use super::mixing::random_noise_segment;
use crate::error::{Error, Result};
use crate::features::{mean_square, pad_or_trim, read_wav, AudioClip, CLIP_SAMPLES, SAMPLE_RATE};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the speech corpus root, `/`-separated.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

impl ManifestEntry {
    /// Speaker/recording id: the file stem up to `_nohash_`.
    pub fn source_id(&self) -> &str {
        source_id(&self.path)
    }
}

pub fn source_id(path: &str) -> &str {
    let file = path.rsplit('/').next().unwrap_or(path);
    let stem = file.strip_suffix(".wav").unwrap_or(file);
    stem.split("_nohash_").next().unwrap_or(stem)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEntry {
    /// Path relative to the noise corpus root.
    pub path: String,
    /// Length in seconds.
    pub duration: f64,
}

/// Speech records plus the noise inventory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub noise: Vec<NoiseEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const NOISE_FILE: &str = "noise.tsv";

fn wav_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            wav_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn read_list(path: &Path) -> Result<HashSet<String>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    Ok(fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Split for a source id when no official lists are present: a stable hash
/// of the id, 10% validation, 10% test.
pub fn hashed_split(source: &str) -> Split {
    let digest = Sha256::digest(source.as_bytes());
    match u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest")) % 100 {
        0..=9 => Split::Val,
        10..=19 => Split::Test,
        _ => Split::Train,
    }
}

impl Manifest {
    /// Walks `speech_dir/<word>/*.wav` and every WAV below `noise_dir`.
    ///
    /// Splits come from `validation_list.txt` / `testing_list.txt` when the
    /// corpus ships them, otherwise from [`hashed_split`]. Directories
    /// starting with `_` (such as `_background_noise_`) are skipped.
    pub fn scan(speech_dir: &Path, noise_dir: &Path) -> Result<Self> {
        for (what, dir) in [("speech", speech_dir), ("noise", noise_dir)] {
            if !dir.is_dir() {
                return Err(Error::config(format!("{what} directory {} does not exist", dir.display())));
            }
        }
        let val_list = read_list(&speech_dir.join("validation_list.txt"))?;
        let test_list = read_list(&speech_dir.join("testing_list.txt"))?;
        let use_lists = !val_list.is_empty() || !test_list.is_empty();

        let mut entries = Vec::new();
        let mut words: Vec<PathBuf> = fs::read_dir(speech_dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        words.retain(|p| p.is_dir() && !p.file_name().unwrap_or_default().to_string_lossy().starts_with('_'));
        words.sort();
        for dir in words {
            let word = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
            let label = build_label(&word)?;
            let mut files = Vec::new();
            wav_files(&dir, &mut files)?;
            for file in files {
                let path = relative(speech_dir, &file);
                let split = if use_lists {
                    if val_list.contains(&path) {
                        Split::Val
                    } else if test_list.contains(&path) {
                        Split::Test
                    } else {
                        Split::Train
                    }
                } else {
                    hashed_split(source_id(&path))
                };
                entries.push(ManifestEntry { path, label, split });
            }
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));

        let mut noise_files = Vec::new();
        wav_files(noise_dir, &mut noise_files)?;
        let mut noise = Vec::new();
        for file in noise_files {
            let reader = hound::WavReader::open(&file)?;
            let spec = reader.spec();
            if spec.sample_rate != SAMPLE_RATE || spec.channels != 1 {
                return Err(Error::data(format!("{}: noise must be mono {SAMPLE_RATE} Hz", file.display())));
            }
            noise.push(NoiseEntry {
                path: relative(noise_dir, &file),
                duration: reader.duration() as f64 / SAMPLE_RATE as f64,
            });
        }
        noise.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest { entries, noise })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// `path<TAB>label<TAB>split` per line.
    pub fn speech_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.path, class_name(e.label).expect("valid label"), e.split))
            .collect()
    }

    /// `path<TAB>duration_seconds` per line.
    pub fn noise_tsv(&self) -> String {
        self.noise.iter().map(|n| format!("{}\t{}\n", n.path, n.duration)).collect()
    }

    pub fn parse(speech: &str, noise: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in speech.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, split] = fields[..] else {
                return Err(Error::Format(format!("manifest line {}: expected 3 tab-separated fields", no + 1)));
            };
            let label = class_id(label)
                .ok_or_else(|| Error::Format(format!("manifest line {}: unknown label '{label}'", no + 1)))?;
            entries.push(ManifestEntry { path: path.to_string(), label, split: split.parse()? });
        }
        let mut noise_entries = Vec::new();
        for (no, line) in noise.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let Some((path, duration)) = line.split_once('\t') else {
                return Err(Error::Format(format!("noise line {}: expected path and duration", no + 1)));
            };
            let duration = duration
                .parse()
                .map_err(|_| Error::Format(format!("noise line {}: bad duration '{duration}'", no + 1)))?;
            noise_entries.push(NoiseEntry { path: path.to_string(), duration });
        }
        Ok(Manifest { entries, noise: noise_entries })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), self.speech_tsv())?;
        fs::write(dir.join(NOISE_FILE), self.noise_tsv())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name))
                .map_err(|e| Error::config(format!("cannot read {}: {e}", dir.join(name).display())))
        };
        Manifest::parse(&read(MANIFEST_FILE)?, &read(NOISE_FILE)?)
    }

    /// Checks that no source id appears in two splits and, given roots, that
    /// every referenced file exists.
    pub fn validate(&self, speech_root: Option<&Path>, noise_root: Option<&Path>) -> Result<()> {
        let mut owner: HashMap<&str, Split> = HashMap::new();
        for e in &self.entries {
            if let Some(prev) = owner.insert(e.source_id(), e.split) {
                if prev != e.split {
                    return Err(Error::data(format!("source {} appears in {prev} and {}", e.source_id(), e.split)));
                }
            }
        }
        if let Some(root) = speech_root {
            if let Some(e) = self.entries.iter().find(|e| !root.join(&e.path).is_file()) {
                return Err(Error::data(format!("missing speech file {}", root.join(&e.path).display())));
            }
        }
        if let Some(root) = noise_root {
            if let Some(n) = self.noise.iter().find(|n| !root.join(&n.path).is_file()) {
                return Err(Error::data(format!("missing noise file {}", root.join(&n.path).display())));
            }
        }
        Ok(())
    }
}

/// Noise recordings held in memory.
#[derive(Clone, Debug, Default)]
pub struct NoisePool {
    pub files: Vec<Vec<f32>>,
}

impl NoisePool {
    pub fn load(manifest: &Manifest, noise_root: &Path) -> Result<Self> {
        let files = manifest
            .noise
            .iter()
            .map(|n| read_wav(noise_root.join(&n.path)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(i) = files.iter().position(Vec::is_empty) {
            return Err(Error::data(format!("noise file {} is empty", manifest.noise[i].path)));
        }
        Ok(NoisePool { files })
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&[f32]> {
        if self.files.is_empty() {
            return Err(Error::config("noise corpus is empty"));
        }
        Ok(&self.files[rng.gen_range(0..self.files.len())])
    }
}

/// Loads one split, padded to one second, followed by
/// `round(silence_fraction * n)` synthesized silence clips.
///
/// A silence clip is a noise segment scaled to the median power of the
/// split's speech clips; without a noise corpus it is all zeros.
pub fn load_split(
    manifest: &Manifest,
    speech_root: &Path,
    split: Split,
    noise: &NoisePool,
    silence_fraction: f64,
    seed: u64,
) -> Result<Vec<AudioClip>> {
    let mut clips = manifest
        .split(split)
        .map(|e| {
            let samples = read_wav(speech_root.join(&e.path))?;
            if samples.is_empty() {
                return Err(Error::data(format!("{} has no samples", e.path)));
            }
            pad_or_trim(&AudioClip::new(samples, e.label, e.path.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_silence = (silence_fraction * clips.len() as f64).round() as usize;
    if n_silence == 0 {
        return Ok(clips);
    }
    let mut powers: Vec<f64> = clips.iter().map(AudioClip::power).filter(|p| *p > 0.0).collect();
    powers.sort_by(f64::total_cmp);
    let target = powers.get(powers.len() / 2).copied().unwrap_or(1e-3);
    for i in 0..n_silence {
        let id = format!("{SILENCE_MARKER}/{split}/{i}");
        let samples = if noise.is_empty() {
            vec![0.0; CLIP_SAMPLES]
        } else {
            let mut rng = rng_for(seed, &id);
            let segment = random_noise_segment(noise.pick(&mut rng)?, &mut rng);
            let p = mean_square(segment.iter().copied());
            let gain = if p > 0.0 { (target / p).sqrt() } else { 0.0 };
            segment.iter().map(|v| (gain * v).clamp(-1.0, 1.0) as f32).collect()
        };
        clips.push(AudioClip::new(samples, SILENCE, id));
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::write_wav;

    #[test]
    fn source_ids_strip_the_utterance_suffix() {
        assert_eq!(source_id("yes/0a7c2a8d_nohash_1.wav"), "0a7c2a8d");
        assert_eq!(source_id("bird/plain.wav"), "plain");
    }

    #[test]
    fn tsv_round_trip() {
        let m = Manifest {
            entries: vec![
                ManifestEntry { path: "yes/a_nohash_0.wav".into(), label: 4, split: Split::Train },
                ManifestEntry { path: "bird/b_nohash_0.wav".into(), label: 11, split: Split::Test },
            ],
            noise: vec![NoiseEntry { path: "n/rain.wav".into(), duration: 2.5 }],
        };
        assert_eq!(Manifest::parse(&m.speech_tsv(), &m.noise_tsv()).unwrap(), m);
        assert!(matches!(Manifest::parse("a\tyes\n", ""), Err(Error::Format(_))));
        assert!(matches!(Manifest::parse("a\tbird\ttrain\n", ""), Err(Error::Format(_))));
    }

    #[test]
    fn scan_uses_official_lists_and_keeps_speakers_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let speech = dir.path().join("speech");
        let noise = dir.path().join("noise");
        for (word, spk) in [("yes", "aaa"), ("yes", "bbb"), ("cat", "ccc"), ("no", "aaa")] {
            fs::create_dir_all(speech.join(word)).unwrap();
            write_wav(speech.join(word).join(format!("{spk}_nohash_0.wav")), &[0.1; 800]).unwrap();
        }
        fs::create_dir_all(speech.join("_background_noise_")).unwrap();
        write_wav(speech.join("_background_noise_/x.wav"), &[0.1; 800]).unwrap();
        fs::write(speech.join("testing_list.txt"), "cat/ccc_nohash_0.wav\n").unwrap();
        fs::write(speech.join("validation_list.txt"), "yes/bbb_nohash_0.wav\n").unwrap();
        fs::create_dir_all(noise.join("sub")).unwrap();
        write_wav(noise.join("sub/hum.wav"), &[0.2; 24000]).unwrap();

        let m = Manifest::scan(&speech, &noise).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.split(Split::Test).map(|e| e.label).collect::<Vec<_>>(), vec![11]);
        assert_eq!(m.split(Split::Val).count(), 1);
        assert_eq!(m.noise, vec![NoiseEntry { path: "sub/hum.wav".into(), duration: 1.5 }]);
        m.validate(Some(&speech), Some(&noise)).unwrap();

        let pool = NoisePool::load(&m, &noise).unwrap();
        let train = load_split(&m, &speech, Split::Train, &pool, 0.5, 3).unwrap();
        assert_eq!(train.len(), 3);
        assert!(train.iter().all(|c| c.samples.len() == CLIP_SAMPLES));
        assert_eq!(train[2].label, SILENCE);
        assert!(train[2].power() > 0.0);

        assert!(matches!(Manifest::scan(&speech, &dir.path().join("missing")), Err(Error::Config(_))));
    }

    #[test]
    fn validation_flags_shared_speakers() {
        let m = Manifest {
            entries: vec![
                ManifestEntry { path: "yes/a_nohash_0.wav".into(), label: 4, split: Split::Train },
                ManifestEntry { path: "no/a_nohash_1.wav".into(), label: 5, split: Split::Test },
            ],
            noise: vec![],
        };
        assert!(matches!(m.validate(None, None), Err(Error::Data(_))));
    }
}
