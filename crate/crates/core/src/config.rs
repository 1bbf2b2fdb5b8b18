//! TOML experiment configuration and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{Split, SynthSpec};
use crate::error::{Error, Result};
use crate::graph::World;
use crate::objective::LossConfig;
use crate::trainer::{ModelConfig, RunConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory.
    pub dir: Option<PathBuf>,
}

/// Hard-mask threshold: picked on validation, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Tau {
    #[default]
    Auto,
    Value(f64),
}

impl std::str::FromStr for Tau {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Tau::Auto);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Tau::Value)
            .ok_or_else(|| Error::Config(format!("tau must be 'auto' or a number, got '{s}'")))
    }
}

impl std::fmt::Display for Tau {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tau::Auto => f.write_str("auto"),
            Tau::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Tau {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tau::Auto => s.serialize_str("auto"),
            Tau::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Tau::Value(v)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Split,
    /// Candidate set; defaults to the training world of the checkpoint.
    pub world: Option<World>,
    pub hard_mask: bool,
    pub tau: Tau,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            world: None,
            hard_mask: false,
            tau: Tau::Auto,
        }
    }
}

/// Everything a config file may set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn run(&self) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
        }
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Config,
    /// Inputs and outputs, as given on the command line.
    pub artifacts: Vec<PathBuf>,
    /// Omitted unless requested, so reruns stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &Config) -> Self {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: config.clone(),
            artifacts: Vec::new(),
            wall_clock_secs: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn sections_parse() {
        let c = Config::parse(
            "[train]\nepochs = 5\nmode = \"closed\"\n[eval]\ntau = 0.25\nworld = \"open\"\n[loss]\nalpha_max = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.eval.tau, Tau::Value(0.25));
        assert_eq!(c.eval.world, Some(World::Open));
        assert_eq!(c.loss.alpha_max, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[train]\nepoch = 5\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.eval.tau = Tau::Value(-0.5);
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }
}
