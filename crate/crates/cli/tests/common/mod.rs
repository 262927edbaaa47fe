#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fcanet::data::build_label;
use fcanet::features::{write_wav, AudioClip, CLIP_SAMPLES, SAMPLE_RATE};
use fcanet::seed::rng_for;
use rand::Rng;

/// A short harmonic burst whose pitch and timbre depend on the class, with
/// per-clip jitter in pitch, onset, level and background hiss.
pub fn keyword(label: usize, variant: u64) -> Vec<f32> {
    let mut rng = rng_for(variant, &format!("keyword/{label}"));
    let f0 = (220.0 + 90.0 * label as f64) * rng.gen_range(0.97..1.03);
    let onset = rng.gen_range(0..CLIP_SAMPLES / 4);
    let len = CLIP_SAMPLES / 2;
    let level = rng.gen_range(0.25..0.5);
    let harmonics = 1 + label % 3;
    (0..CLIP_SAMPLES)
        .map(|i| {
            let hiss = rng.gen_range(-0.004..0.004);
            if i < onset || i >= onset + len {
                return hiss as f32;
            }
            let t = (i - onset) as f64 / SAMPLE_RATE as f64;
            let env = (std::f64::consts::PI * (i - onset) as f64 / len as f64).sin();
            let tone: f64 = (1..=harmonics)
                .map(|h| (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64)
                .sum();
            (level * env * tone / harmonics as f64 + hiss) as f32
        })
        .collect()
}

pub fn clip(word: &str, variant: u64) -> AudioClip {
    let label = build_label(word).expect("vocabulary word");
    AudioClip::new(keyword(label, variant), label, format!("{word}{variant}"))
}

/// On-disk speech and noise corpora plus a config that points at them.
pub struct Corpus {
    pub root: PathBuf,
    pub speech: PathBuf,
    pub noise: PathBuf,
    pub files: usize,
}

impl Corpus {
    /// `per_word` clips of each word; every fifth speaker goes to
    /// validation and the next one to test.
    pub fn create(root: &Path, words: &[&str], per_word: usize) -> Corpus {
        let speech = root.join("speech");
        let noise = root.join("noise");
        let (mut val, mut test) = (String::new(), String::new());
        let mut files = 0;
        for word in words {
            let label = build_label(word).unwrap();
            fs::create_dir_all(speech.join(word)).unwrap();
            for k in 0..per_word {
                let rel = format!("{word}/{:08x}_nohash_0.wav", 0x1000 + k);
                let mut samples = keyword(label, k as u64);
                if k % 7 == 6 {
                    samples.truncate(CLIP_SAMPLES - 1234);
                }
                write_wav(speech.join(&rel), &samples).unwrap();
                files += 1;
                match k % 5 {
                    3 => val.push_str(&format!("{rel}\n")),
                    4 => test.push_str(&format!("{rel}\n")),
                    _ => {}
                }
            }
        }
        fs::write(speech.join("validation_list.txt"), val).unwrap();
        fs::write(speech.join("testing_list.txt"), test).unwrap();
        fs::create_dir_all(speech.join("_background_noise_")).unwrap();
        write_wav(speech.join("_background_noise_/hum.wav"), &vec![0.1; 4000]).unwrap();

        fs::create_dir_all(noise.join("music")).unwrap();
        let mut rng = rng_for(7, "noise");
        let white: Vec<f32> = (0..3 * CLIP_SAMPLES).map(|_| rng.gen_range(-0.2..0.2)).collect();
        write_wav(noise.join("white.wav"), &white).unwrap();
        let mut acc = 0.0f32;
        let brown: Vec<f32> = (0..CLIP_SAMPLES * 7 / 10)
            .map(|_| {
                acc = (0.98 * acc + rng.gen_range(-0.05..0.05)).clamp(-1.0, 1.0);
                acc
            })
            .collect();
        write_wav(noise.join("music/brown.wav"), &brown).unwrap();
        Corpus { root: root.to_path_buf(), speech, noise, files }
    }

    /// Writes `<root>/<name>.cfg` with the corpus paths, `data_dir` and
    /// `extra` lines.
    pub fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            "speech_dir = {}\nnoise_dir = {}\ndata_dir = {}\n{extra}",
            self.speech.display(),
            self.noise.display(),
            self.root.join("prepared").display()
        );
        let path = self.root.join(format!("{name}.cfg"));
        fs::write(&path, text).unwrap();
        path
    }
}

/// A small trainable network and a short schedule.
pub const TINY: &str = "\
stem_channels = 4
blocks = 2
channels = 8
kernel_freq = 3
kernel_time = 3
kernel_1d = 3
batch_size = 8
max_epochs = 3
patience = 2
mixup = false
";

pub fn fcanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcanet")).args(args).output().expect("spawn fcanet")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
