use crate::error::{Error, Result};

/// Class names in id order.
pub const CLASSES: [&str; 12] = ["up", "down", "left", "right", "yes", "no", "on", "off", "go", "stop", "silence", "unknown"];
pub const NUM_CLASSES: usize = CLASSES.len();
pub const SILENCE: usize = 10;
pub const UNKNOWN: usize = 11;
/// Token standing for a clip with no speech.
pub const SILENCE_MARKER: &str = "_silence_";

/// The 35-word Speech Commands v2 vocabulary.
pub const VOCABULARY: [&str; 35] = [
    "backward", "bed", "bird", "cat", "dog", "down", "eight", "five", "follow", "forward", "four", "go", "happy",
    "house", "learn", "left", "marvin", "nine", "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop",
    "three", "tree", "two", "up", "visual", "wow", "yes", "zero",
];

/// Class id of a vocabulary word or the silence marker; words outside the
/// ten targets fold into `unknown`.
pub fn build_label(word: &str) -> Result<usize> {
    if word == SILENCE_MARKER {
        return Ok(SILENCE);
    }
    if let Some(id) = CLASSES[..10].iter().position(|c| *c == word) {
        return Ok(id);
    }
    if VOCABULARY.contains(&word) {
        return Ok(UNKNOWN);
    }
    Err(Error::data(format!("'{word}' is neither a vocabulary word nor the silence marker")))
}

/// Name of a class id, or the class name itself when parsing manifests.
pub fn class_name(id: usize) -> Option<&'static str> {
    CLASSES.get(id).copied()
}

pub fn class_id(name: &str) -> Option<usize> {
    CLASSES.iter().position(|c| *c == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(build_label("yes").unwrap(), 4);
        assert_eq!(build_label("bird").unwrap(), UNKNOWN);
        assert_eq!(build_label(SILENCE_MARKER).unwrap(), SILENCE);
        assert!(matches!(build_label("blorp"), Err(Error::Data(_))));
    }

    #[test]
    fn map_is_bijective_over_class_names() {
        for (i, name) in CLASSES.iter().enumerate() {
            assert_eq!(class_id(name), Some(i));
            assert_eq!(class_name(i), Some(*name));
        }
        let targets = VOCABULARY.iter().filter(|w| build_label(w).unwrap() != UNKNOWN).count();
        assert_eq!(targets, 10);
    }
}
