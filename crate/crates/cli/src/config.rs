//! Layered `key=value` settings: built-in defaults, then a config file, then
//! command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use aquafeat_core::dataset::SplitFractions;
use aquafeat_core::detector::HeadConfig;
use aquafeat_core::net::NetConfig;
use aquafeat_core::train::{AdamWConfig, TrainConfig};
use aquafeat_core::ModelConfig;

use crate::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("batch_size", "6"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("cf_channels", "32"),
    ("checkpoint_every", "0"),
    ("conf", "0.25"),
    ("eps", "1e-8"),
    ("growth", "16"),
    ("head_widths", "16,32,32"),
    ("leaky_slope", "0.01"),
    ("lr", "0.0003"),
    ("nms", "0.5"),
    ("objectness_prior", "0.01"),
    ("residual_target", "original"),
    ("safa_heads", "8"),
    ("seed", "0"),
    ("splits", "0.7,0.2,0.1"),
    ("stat_eps", "1e-5"),
    ("steps", "1000"),
    ("stride", "30"),
    ("train_enhancer", "true"),
    ("weight_decay", "0.01"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            values: DEFAULTS
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, line: &str) -> Result<(), CliError> {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {line:?}")))?;
        self.set(k, v)
    }

    /// Applies a config file: `key=value` lines, `#` comments, blank lines.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).map_err(|e| {
                CliError::Usage(format!("{}:{}: {}", origin.display(), i + 1, e.message()))
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, path)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = &self.values[key];
        raw.parse()
            .map_err(|e| CliError::Usage(format!("config {key}={raw:?}: {e}")))
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let widths: Vec<usize> = self.values["head_widths"]
            .split(',')
            .map(|w| w.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(format!("config head_widths: {e}")))?;
        let widths: [usize; 3] = widths.try_into().map_err(|_| {
            CliError::Usage("config head_widths needs three comma-separated widths".into())
        })?;
        let net = NetConfig {
            cf_channels: self.get("cf_channels")?,
            growth: self.get("growth")?,
            leaky_slope: self.get("leaky_slope")?,
            safa_heads: self.get("safa_heads")?,
            residual_target: self.get("residual_target")?,
            stat_eps: self.get("stat_eps")?,
        };
        net.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let head = HeadConfig {
            widths,
            leaky_slope: self.get("leaky_slope")?,
            objectness_prior: self.get("objectness_prior")?,
        };
        head.validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(ModelConfig { net, head })
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            optimizer: AdamWConfig {
                learning_rate: self.get("lr")?,
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                eps: self.get("eps")?,
                weight_decay: self.get("weight_decay")?,
            },
            batch_size: self.get("batch_size")?,
            steps: self.get("steps")?,
            seed: self.get("seed")?,
            train_enhancer: self.get("train_enhancer")?,
            checkpoint: None,
            checkpoint_every: self.get("checkpoint_every")?,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn splits(&self) -> Result<SplitFractions, CliError> {
        self.get("splits")
    }
}
