//! Run configuration files: `key = value` lines, `#` starts a comment.
//!
//! Missing keys keep their defaults. Unknown keys, duplicates and values
//! that do not parse are errors carrying the 1-based line number.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

pub const DEFAULT_CHECKPOINT: &str = "sinet.ckpt";
pub const LOG_FILE: &str = "train.log";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Dataset root holding `raw/` and `reference/`.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Last-parameters checkpoint; relative paths live under `output_dir`.
    pub checkpoint: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            dataset: None,
            output_dir: PathBuf::from("."),
            checkpoint: PathBuf::from(DEFAULT_CHECKPOINT),
        }
    }
}

pub const KEYS: &[&str] = &[
    "k_filters",
    "kernel_size",
    "iterations",
    "variant",
    "learning_rate",
    "batch_size",
    "crop",
    "epochs",
    "max_steps",
    "seed",
    "beta1",
    "beta2",
    "epsilon",
    "flips",
    "alpha1",
    "alpha2",
    "alpha3",
    "enable_int",
    "enable_text",
    "enable_ssim",
    "dataset",
    "output_dir",
    "checkpoint",
];

impl RunConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join(&self.checkpoint)
    }

    pub fn log_path(&self) -> PathBuf {
        self.output_dir.join(LOG_FILE)
    }

    /// Shape checks on every section plus a dataset layout check.
    pub fn validate_for_training(&self) -> Result<&Path> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        let root = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::arg("config does not set `dataset`"))?;
        for sub in [crate::dataset::RAW_DIR, crate::dataset::REFERENCE_DIR] {
            let d = root.join(sub);
            if !d.is_dir() {
                return Err(Error::Dataset(format!("missing directory {}", d.display())));
            }
        }
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            return Err(Error::arg(format!("output_dir {} is not a directory", self.output_dir.display())));
        }
        Ok(root)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize, base: &Path) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let l = &mut self.loss;
        match key {
            "k_filters" => m.k_filters = parse(value, line, "a positive integer")?,
            "kernel_size" => m.kernel_size = parse(value, line, "an odd positive integer")?,
            "iterations" => m.iterations = parse(value, line, "a positive integer")?,
            "variant" => m.variant = parse::<Variant>(value, line, "a model variant (full, ds1, ds2, ds3, ds4)")?,
            "learning_rate" => t.learning_rate = parse(value, line, "a real number")?,
            "batch_size" => t.batch_size = parse(value, line, "a positive integer")?,
            "crop" => t.crop = parse(value, line, "a positive integer")?,
            "epochs" => t.epochs = Some(parse(value, line, "a positive integer")?),
            "max_steps" => t.max_steps = Some(parse(value, line, "a positive integer")?),
            "seed" => t.seed = parse(value, line, "an unsigned integer")?,
            "beta1" => t.beta1 = parse(value, line, "a real number")?,
            "beta2" => t.beta2 = parse(value, line, "a real number")?,
            "epsilon" => t.epsilon = parse(value, line, "a real number")?,
            "flips" => t.flips = parse_bool(value, line)?,
            "alpha1" => l.alpha1 = parse(value, line, "a real number")?,
            "alpha2" => l.alpha2 = parse(value, line, "a real number")?,
            "alpha3" => l.alpha3 = parse(value, line, "a real number")?,
            "enable_int" => l.enable_int = parse_bool(value, line)?,
            "enable_text" => l.enable_text = parse_bool(value, line)?,
            "enable_ssim" => l.enable_ssim = parse_bool(value, line)?,
            "dataset" => self.dataset = Some(resolve(base, value)),
            "output_dir" => self.output_dir = resolve(base, value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn parse<T: FromStr>(value: &str, line: usize, expected: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("expected {expected}, found `{value}`"),
    })
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("expected a boolean (true/false), found `{value}`"),
        }),
    }
}

/// Parses config text. Relative paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config {
                line,
                message: "missing key before `=`".into(),
            });
        }
        if value.is_empty() {
            return Err(Error::Config {
                line,
                message: format!("missing value for `{key}`"),
            });
        }
        if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}` (first set on line {first})"),
            });
        }
        cfg.apply(key, value, line, base)?;
        seen.push((key.to_string(), line));
    }
    Ok(cfg)
}

/// Reads and parses a config file; relative paths inside it are resolved
/// against the file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Config {
        line: 0,
        message: format!("{} is not UTF-8: {e}", path.display()),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}
