//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are errors. [`RunConfig::to_text`] writes every
//! key in a fixed order, so parsing its output and writing again is the
//! identity.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// A group of settings addressable by key.
pub trait Settings {
    /// Applies one setting; `Ok(false)` if the key is not ours.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
    /// Every setting in canonical order.
    fn pairs(&self) -> Vec<(&'static str, String)>;
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("invalid value '{value}' for {key}")))
}

/// Splits config text into `(line number, key, value)`.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}: expected key = value", i + 1)));
        };
        let key = key.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(Error::config(format!("line {}: duplicate key {key}", i + 1)));
        }
        out.push((i + 1, key, value.trim().to_string()));
    }
    Ok(out)
}

/// Applies `text` on top of `target`, rejecting keys it does not know.
pub fn apply<S: Settings + ?Sized>(target: &mut S, text: &str) -> Result<()> {
    for (line, key, value) in parse_lines(text)? {
        if !target.set(&key, &value)? {
            return Err(Error::config(format!("line {line}: unknown key {key}")));
        }
    }
    Ok(())
}

pub fn render<S: Settings + ?Sized>(settings: &S) -> String {
    settings.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Everything a command needs: corpus locations, seed, network and
/// optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub speech_dir: PathBuf,
    pub noise_dir: PathBuf,
    /// Where `prepare` writes the manifest and eval sets.
    pub data_dir: PathBuf,
    /// Synthesized silence clips per split, as a fraction of the split size.
    pub silence_fraction: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Clips per forward pass in `eval`.
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            speech_dir: PathBuf::from("speech_commands"),
            noise_dir: PathBuf::from("noise"),
            data_dir: PathBuf::from("prepared"),
            silence_fraction: 0.1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_batch: 64,
        }
    }
}

impl Settings for RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "speech_dir" => self.speech_dir = PathBuf::from(value),
            "noise_dir" => self.noise_dir = PathBuf::from(value),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "silence_fraction" => self.silence_fraction = parse_value(key, value)?,
            "eval_batch" => self.eval_batch = parse_value(key, value)?,
            _ => return Ok(self.model.set(key, value)? || self.train.set(key, value)?),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("speech_dir", self.speech_dir.display().to_string()),
            ("noise_dir", self.noise_dir.display().to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("silence_fraction", self.silence_fraction.to_string()),
            ("eval_batch", self.eval_batch.to_string()),
        ];
        out.extend(self.model.pairs());
        out.extend(self.train.pairs());
        out
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        apply(&mut cfg, text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        render(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.silence_fraction) {
            return Err(Error::config(format!("silence_fraction {} outside [0, 1]", self.silence_fraction)));
        }
        if self.eval_batch == 0 {
            return Err(Error::config("eval_batch must be positive"));
        }
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn comments_blanks_and_overrides() {
        let cfg = RunConfig::parse("# tiny\n\nblocks = 2  # fewer\nmixer_ratio=0.25\nattention = se\nplacement = pre\n").unwrap();
        assert_eq!(cfg.model.blocks, 2);
        assert_eq!(cfg.model.mixer_ratio, 0.25);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn bad_input_names_the_problem() {
        let err = RunConfig::parse("blocks = 2\nwidth = 3\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("width")), "{err}");
        assert!(matches!(RunConfig::parse("blocks = two"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("blocks = 2\nblocks = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("blocks"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("attention = none"), Err(Error::Config(_))));
    }
}
