//! Flat `key=value` run configuration with dotted keys.
//!
//! ```text
//! # comment
//! model.name=stacked_gru
//! train.lr0=0.001
//! seed=7
//! ```
//!
//! Values come from built-in defaults, then a config file, then command
//! line overrides. [`RunConfig::resolve`] turns them into typed settings and
//! a complete echo of every key for provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use signspeak_core::data::MAX_FRAMES;
use signspeak_core::models::{ModelConfig, ModelKind, Readout};
use signspeak_core::stream::SegmenterConfig;
use signspeak_core::train::TrainConfig;

use crate::{CliError, CliResult};

/// Every accepted key in echo order. `None` marks model-dependent defaults.
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("0")),
    ("model.name", Some("stacked_gru")),
    ("model.readout", Some("last_valid")),
    ("train.batch_size", None),
    ("train.max_epochs", Some("300")),
    ("train.lr0", Some("0.001")),
    ("train.lr_min", Some("0.0001")),
    ("train.plateau_factor", Some("0.5")),
    ("train.plateau_patience", Some("20")),
    ("train.beta1", Some("0.9")),
    ("train.beta2", Some("0.999")),
    ("train.eps", Some("0.00000001")),
    ("train.weight_decay", Some("0.01")),
    ("train.folds", Some("5")),
    ("train.fold", Some("0")),
    ("train.workers", Some("0")),
    ("stream.threshold", Some("5000")),
    ("stream.min_len", Some("50")),
    ("stream.max_len", None),
    ("stream.sample_rate_hz", Some("36")),
    ("stream.rate_hz", Some("0")),
    ("stream.rest_frames", Some("5")),
    ("stream.queue", Some("64")),
];

/// Unresolved key/value settings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Replay pacing and queueing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    /// Frames per second; 0 replays as fast as the consumer allows.
    pub rate_hz: f64,
    /// Inactive frames inserted after every recording.
    pub rest_frames: usize,
    pub queue_capacity: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            rate_hz: 0.0,
            rest_frames: 5,
            queue_capacity: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub kind: ModelKind,
    pub train: TrainConfig,
    /// Fold trained by the `train` command.
    pub fold: usize,
    /// Fold-level worker threads for `cv`; 0 picks min(folds, cores).
    pub workers: usize,
    pub segmenter: SegmenterConfig,
    pub replay: ReplayOptions,
    /// Every key with its resolved value, in a fixed order.
    pub echo: Vec<(String, String)>,
}

impl Resolved {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Echo as `key=value` lines.
    pub fn echo_lines(&self) -> Vec<String> {
        self.echo.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses config text. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, source: &str) -> CliResult<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{source}:{}: expected key=value, got `{line}`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| e.context(format!("{source}:{}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            let err = CliError::io(path, e);
            CliError::Usage(err.to_string())
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !is_known(key) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> CliResult<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Rebuilds a config from echoed pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> CliResult<Self> {
        let mut cfg = Self::new();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn resolve(&self) -> CliResult<Resolved> {
        let name = self.get("model.name").unwrap_or("stacked_gru");
        let kind = ModelKind::from_name(name).ok_or_else(|| unknown_model(name))?;
        let mut echo = Vec::with_capacity(KEYS.len());
        for (key, default) in KEYS {
            let value = match (self.get(key), default) {
                (Some(v), _) => v.to_string(),
                (None, Some(d)) => (*d).to_string(),
                (None, None) => match *key {
                    "train.batch_size" => kind.batch_size().to_string(),
                    "stream.max_len" => MAX_FRAMES.to_string(),
                    _ => unreachable!("model-dependent default for {key}"),
                },
            };
            echo.push((key.to_string(), value));
        }
        let map: BTreeMap<&str, &str> = echo.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let num = |key: &str| -> CliResult<f64> { parse_value(key, map[key]) };
        let int = |key: &str| -> CliResult<usize> { parse_value(key, map[key]) };

        let readout_name = map["model.readout"];
        let readout = Readout::from_name(readout_name).ok_or_else(|| {
            CliError::Usage(format!(
                "model.readout must be last_valid or final_index, got `{readout_name}`"
            ))
        })?;
        let mut model = kind.config();
        match &mut model {
            ModelConfig::StackedRnn(c) => c.readout = readout,
            ModelConfig::DenseRnn(c) => c.readout = readout,
            ModelConfig::Encoder(_) if readout != Readout::LastValid => {
                return Err(CliError::Usage("model.readout applies only to recurrent models".into()));
            }
            ModelConfig::Encoder(_) => {}
        }
        let train = TrainConfig {
            model,
            batch_size: int("train.batch_size")?,
            max_epochs: int("train.max_epochs")?,
            lr0: num("train.lr0")?,
            lr_min: num("train.lr_min")?,
            plateau_factor: num("train.plateau_factor")?,
            plateau_patience: int("train.plateau_patience")?,
            beta1: num("train.beta1")?,
            beta2: num("train.beta2")?,
            eps: num("train.eps")?,
            weight_decay: num("train.weight_decay")?,
            seed: parse_value("seed", map["seed"])?,
            folds: int("train.folds")?,
        };
        train.validate()?;
        if train.max_epochs == 0 {
            return Err(CliError::Usage("train.max_epochs must be at least 1".into()));
        }
        let fold = int("train.fold")?;
        if fold >= train.folds {
            return Err(CliError::Usage(format!(
                "train.fold {fold} out of range for {} folds",
                train.folds
            )));
        }
        let segmenter = SegmenterConfig {
            activation_threshold: parse_value("stream.threshold", map["stream.threshold"])?,
            min_len: int("stream.min_len")?,
            max_len: int("stream.max_len")?,
            sample_rate_hz: num("stream.sample_rate_hz")?,
        };
        segmenter.validate()?;
        let replay = ReplayOptions {
            rate_hz: num("stream.rate_hz")?,
            rest_frames: int("stream.rest_frames")?,
            queue_capacity: int("stream.queue")?,
        };
        if !(replay.rate_hz >= 0.0 && replay.rate_hz.is_finite()) {
            return Err(CliError::Usage("stream.rate_hz must be finite and non-negative".into()));
        }
        if replay.queue_capacity == 0 {
            return Err(CliError::Usage("stream.queue must be at least 1".into()));
        }
        Ok(Resolved {
            kind,
            train,
            fold,
            workers: int("train.workers")?,
            segmenter,
            replay,
            echo,
        })
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value `{value}` for {key}")))
}

pub fn unknown_model(name: &str) -> CliError {
    let valid: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
    CliError::Usage(format!("unknown model `{name}`; valid names: {}", valid.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_protocol_values() {
        let r = RunConfig::new().resolve().unwrap();
        assert_eq!(r.kind, ModelKind::StackedGru);
        assert_eq!(r.train, TrainConfig::for_model(ModelKind::StackedGru));
        assert_eq!(r.segmenter, SegmenterConfig::default());
        assert_eq!(r.echo.len(), KEYS.len());
    }

    #[test]
    fn encoder_batch_default_follows_model() {
        let mut c = RunConfig::new();
        c.set("model.name", "encoder").unwrap();
        assert_eq!(c.resolve().unwrap().train.batch_size, 256);
    }

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::parse("# x\n\ntrain.lr0 = 0.01\nseed=3\n", "cfg").unwrap();
        c.apply_overrides(["seed=9"]).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.train.lr0, 0.01);
        assert_eq!(r.seed(), 9);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::new();
        c.apply_overrides(["model.name=dense_lstm", "model.readout=final_index"])
            .unwrap();
        let r = c.resolve().unwrap();
        let again = RunConfig::from_pairs(r.echo.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("nonsense\n", "cfg").is_err());
        assert!(RunConfig::new().set("train.nope", "1").is_err());
        let mut c = RunConfig::new();
        c.set("model.name", "mlp").unwrap();
        let msg = c.resolve().unwrap_err().to_string();
        assert!(msg.contains("stacked_gru") && msg.contains("encoder"), "{msg}");
        let mut c = RunConfig::new();
        c.set("train.lr0", "fast").unwrap();
        assert!(c.resolve().is_err());
        let mut c = RunConfig::new();
        c.apply_overrides(["model.name=encoder", "model.readout=final_index"])
            .unwrap();
        assert!(c.resolve().is_err());
        let mut c = RunConfig::new();
        c.set("train.fold", "5").unwrap();
        assert!(c.resolve().is_err());
    }
}
