//! Platform configuration, read from JSON or from `key = value` lines.
//!
//! Only the keys listed on [`PlatformConfig`] are accepted; anything else is
//! an error so that typos never silently fall back to defaults.

use std::path::{Path, PathBuf};

use embref_core::scenegen::GenConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
}

/// Placement modes requested from a dataset build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildModes {
    Random,
    Adversarial,
    /// One random and one adversarial scene per agent placement.
    Paired,
}

/// Agent placements per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// Every documented key, with its default.
///
/// | key | meaning |
/// |---|---|
/// | `seed` | master seed for builds and sessions |
/// | `angles` | relative yaw gaps to cover, degrees |
/// | `placements_per_angle` | agent placements per angle and pass |
/// | `modes` | `random`, `adversarial` or `paired` |
/// | `splits` | placements per split, `train`/`validation`/`test` |
/// | `max_failure_rate` | abort threshold for generation failures |
/// | `render_width`, `render_height` | served observation size |
/// | `judgments` | listener judgments collected per human utterance |
/// | `session_scenes` | scenes queued per session |
/// | `session_split` | split that sessions draw scenes from |
/// | `bind` | service address |
/// | `adversary_candidates` | candidate tuples scored per adversarial scene |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub seed: u64,
    pub angles: Vec<f64>,
    pub placements_per_angle: usize,
    pub modes: BuildModes,
    pub splits: SplitCounts,
    pub max_failure_rate: f64,
    pub render_width: u32,
    pub render_height: u32,
    pub judgments: u32,
    pub session_scenes: usize,
    pub session_split: String,
    pub bind: String,
    pub adversary_candidates: usize,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            angles: (0..=180).map(f64::from).collect(),
            placements_per_angle: 2,
            modes: BuildModes::Paired,
            splits: SplitCounts {
                train: 290,
                validation: 36,
                test: 36,
            },
            max_failure_rate: 0.05,
            render_width: 1280,
            render_height: 720,
            judgments: 3,
            session_scenes: 10,
            session_split: "test".into(),
            bind: "127.0.0.1:8080".into(),
            adversary_candidates: GenConfig::default().adversary_candidates,
        }
    }
}

impl PlatformConfig {
    /// JSON when the file starts with `{`, key-value lines otherwise.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| match unknown_field(&e) {
                Some(k) => ConfigError::UnknownKey(k),
                None => ConfigError::Json(e),
            })?
        } else {
            Self::parse_key_values(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_key_values(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "expected `key = value`".into(),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.into(),
                message: e.to_string(),
            })
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "angles" => self.angles = parse_angles(value).map_err(|message| ConfigError::Value { key: key.into(), message })?,
            "placements_per_angle" => self.placements_per_angle = num(key, value)?,
            "modes" => {
                self.modes = serde_json::from_value(serde_json::Value::String(value.into())).map_err(|_| ConfigError::Value {
                    key: key.into(),
                    message: "expected random, adversarial or paired".into(),
                })?
            }
            "splits.train" => self.splits.train = num(key, value)?,
            "splits.validation" => self.splits.validation = num(key, value)?,
            "splits.test" => self.splits.test = num(key, value)?,
            "max_failure_rate" => self.max_failure_rate = num(key, value)?,
            "render_width" => self.render_width = num(key, value)?,
            "render_height" => self.render_height = num(key, value)?,
            "judgments" => self.judgments = num(key, value)?,
            "session_scenes" => self.session_scenes = num(key, value)?,
            "session_split" => self.session_split = value.into(),
            "bind" => self.bind = value.into(),
            "adversary_candidates" => self.adversary_candidates = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| {
            Err(ConfigError::Value {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.angles.is_empty() || self.angles.iter().any(|a| !(0.0..=180.0).contains(a)) {
            return bad("angles", "need at least one angle in [0, 180]");
        }
        if self.placements_per_angle == 0 {
            return bad("placements_per_angle", "must be positive");
        }
        if self.splits.total() != self.placements() {
            return bad(
                "splits",
                &format!("split counts sum to {} but the build has {} placements", self.splits.total(), self.placements()),
            );
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate", "must be in [0, 1]");
        }
        if self.render_width == 0 || self.render_height == 0 {
            return bad("render_width", "image size must be positive");
        }
        if self.judgments == 0 {
            return bad("judgments", "must be positive");
        }
        if !["train", "validation", "test"].contains(&self.session_split.as_str()) {
            return bad("session_split", "expected train, validation or test");
        }
        if self.adversary_candidates < 2 {
            return bad("adversary_candidates", "need at least two");
        }
        Ok(())
    }

    pub fn placements(&self) -> usize {
        self.angles.len() * self.placements_per_angle
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            adversary_candidates: self.adversary_candidates,
            ..GenConfig::default()
        }
    }
}

/// `0..180` (inclusive, step 1), `0..180:10` (step 10) or a comma list.
pub fn parse_angles(v: &str) -> Result<Vec<f64>, String> {
    if let Some((range, step)) = v.split_once("..").map(|(a, rest)| {
        let (b, s) = rest.split_once(':').unwrap_or((rest, "1"));
        ((a.trim(), b.trim()), s.trim())
    }) {
        let lo: f64 = range.0.parse().map_err(|_| format!("bad range start `{}`", range.0))?;
        let hi: f64 = range.1.parse().map_err(|_| format!("bad range end `{}`", range.1))?;
        let step: f64 = step.parse().map_err(|_| format!("bad step `{step}`"))?;
        if step <= 0.0 || hi < lo {
            return Err("range must be increasing with a positive step".into());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| lo + i as f64 * step).collect());
    }
    v.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad angle `{s}`")))
        .collect()
}

fn unknown_field(e: &serde_json::Error) -> Option<String> {
    let msg = e.to_string();
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}
