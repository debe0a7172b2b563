//! Hyperparameter resolution: built-in defaults, then an optional
//! `key=value` config file, then command-line flags, later layers winning.
//! File paths never come from the config file; they are always flags.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Published hyperparameter values, used verbatim as CLI defaults. The
/// model and optimizer constants mirror `TrainConfig::default` and the
/// full-scale architecture; the rest are documented design defaults.
pub mod defaults {
    pub const LR_ML: f64 = 0.25;
    pub const LR_DECAY: f64 = 0.1;
    pub const LR_FLOOR: f64 = 1e-5;
    pub const LR_RL: f64 = 1e-4;
    pub const MOMENTUM: f64 = 0.99;
    pub const BATCH_SIZE: usize = 32;
    pub const LAMBDA_MIXED: f64 = 0.99;
    pub const GRAD_CLIP_NORM: f64 = 0.1;
    pub const MAX_EPOCHS: usize = 20;

    pub const DIM: usize = 256;
    pub const KERNEL: usize = 3;
    pub const WORD_LAYERS: usize = 6;
    pub const TOPIC_LAYERS: usize = 6;
    pub const MAX_SOURCE_LEN: usize = 128;
    pub const MAX_TARGET_LEN: usize = 64;

    pub const NUM_TOPICS: usize = 16;
    pub const ALPHA: f64 = 0.1;
    pub const BETA: f64 = 0.01;
    pub const ITERATIONS: usize = 500;
    /// Top words kept per topic when building the topic vocabulary.
    pub const TOP_N: usize = 200;
    /// Words in more than this fraction of documents are "universal" and
    /// never enter the topic vocabulary.
    pub const UNIVERSAL_THRESHOLD: f64 = 0.5;

    pub const VOCAB_SIZE: usize = 50_000;
    pub const MIN_COUNT: u64 = 1;
    pub const BEAM_SIZE: usize = 5;
    pub const SEED: u64 = 0;
}

/// Every key the config file may define. Kept sorted so the listing in
/// error messages is stable.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "batch-size",
    "beam-size",
    "beta",
    "dim",
    "grad-clip-norm",
    "iterations",
    "kernel",
    "lambda-mixed",
    "lr-decay",
    "lr-floor",
    "lr-ml",
    "lr-rl",
    "max-epochs",
    "max-len",
    "max-source-len",
    "max-target-len",
    "min-count",
    "momentum",
    "num-topics",
    "reward",
    "seed",
    "top-n",
    "topic-layers",
    "universal-threshold",
    "vocab-size",
    "word-layers",
];

/// Parsed config file. Lines are `key=value`; blank lines and `#` comments
/// are skipped; unknown keys are rejected so typos cannot silently fall
/// back to defaults.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("--config {}: {e}", path.display()))
        })?;
        FileConfig::parse(&text).map_err(|msg| {
            CliError::validation(format!("--config {}: {msg}", path.display()))
        })
    }

    pub fn parse(text: &str) -> Result<FileConfig, String> {
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key=value, got {raw:?}", lineno + 1));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key {key:?}", lineno + 1));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key {key:?}", lineno + 1));
            }
        }
        Ok(FileConfig { values })
    }

    /// Flag value if given, else the file's, else the default.
    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.resolve(key, flag)? {
            Some(v) => Ok(v),
            None => Ok(default),
        }
    }

    /// Same precedence without a default.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted config key {key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::validation(format!("config key {key}={raw:?}: {e}"))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_frozen_hyperparameter_table() {
        assert_eq!(defaults::LR_ML, 0.25);
        assert_eq!(defaults::LR_DECAY, 0.1);
        assert_eq!(defaults::LR_FLOOR, 1e-5);
        assert_eq!(defaults::LR_RL, 1e-4);
        assert_eq!(defaults::LAMBDA_MIXED, 0.99);
        assert_eq!(defaults::BATCH_SIZE, 32);
        assert_eq!(defaults::TOP_N, 200);
        assert_eq!(defaults::DIM, 256);
        assert_eq!(defaults::WORD_LAYERS, 6);
        assert_eq!(defaults::TOPIC_LAYERS, 6);
        assert_eq!(defaults::MOMENTUM, 0.99);
        assert_eq!(defaults::GRAD_CLIP_NORM, 0.1);
    }

    #[test]
    fn precedence_is_flag_then_file_then_default() {
        let fc = FileConfig::parse("lr-ml = 0.125\n# comment\n\nbatch-size=4\n").unwrap();
        assert_eq!(fc.get("lr-ml", Some(0.5), 0.25).unwrap(), 0.5);
        assert_eq!(fc.get("lr-ml", None, 0.25).unwrap(), 0.125);
        assert_eq!(fc.get("lr-decay", None, 0.1).unwrap(), 0.1);
        assert_eq!(fc.get::<usize>("batch-size", None, 32).unwrap(), 4);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_rejected() {
        assert!(FileConfig::parse("lr=0.1").unwrap_err().contains("unknown key"));
        assert!(FileConfig::parse("lr-ml=1\nlr-ml=2")
            .unwrap_err()
            .contains("duplicate"));
        assert!(FileConfig::parse("just words").unwrap_err().contains("key=value"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let fc = FileConfig::parse("batch-size=many").unwrap();
        let err = fc.get::<usize>("batch-size", None, 32).unwrap_err();
        assert!(err.to_string().contains("batch-size"), "{err}");
    }

    #[test]
    fn known_keys_are_sorted_and_unique() {
        let mut sorted = KNOWN_KEYS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, KNOWN_KEYS);
    }
}
