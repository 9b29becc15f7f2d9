//! Experiment configuration read by the `train` command.
//!
//! ```toml
//! [data]
//! train = ["cubes/a.hsr", "cubes/b.hsr"]
//! sensor = "icvl"              # for cubes without a sensor_id
//! normalization = "percentile" # percentile | global | none
//! simulate_noise = true        # ssl only: add train.noise once per image
//! patch = 64
//! scales = [[1, 64], [2, 32], [4, 32]]   # [downscale factor, stride]
//! center_crop = 1024
//!
//! [model]   # ModelConfig
//! [train]   # TrainConfig, including train.noise
//!
//! [output]
//! checkpoint = "run.ckpt"
//! checkpoint_every = 500
//! ```
//!
//! Unknown keys anywhere are rejected; validation errors carry the dotted key
//! path of the offending entry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::PatchConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Percentile,
    Global,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub sensor: Option<String>,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    #[serde(default = "default_true")]
    pub simulate_noise: bool,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_scales")]
    pub scales: Vec<(usize, usize)>,
    #[serde(default)]
    pub center_crop: Option<usize>,
}

fn default_normalization() -> Normalization {
    Normalization::Percentile
}

fn default_true() -> bool {
    true
}

fn default_patch() -> usize {
    64
}

fn default_scales() -> Vec<(usize, usize)> {
    PatchConfig::default().scales
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let path = unknown_key_path(text, &e).unwrap_or_else(|| "<document>".into());
            Error::config(path, e.message())
        })
    }

    /// Reads the file and resolves relative data paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in &mut cfg.data.train {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            patch: self.data.patch,
            scales: self.data.scales.clone(),
            center_crop: self.data.center_crop,
        }
    }

    /// The sensor the training cubes belong to: `data.sensor`, else the single
    /// sensor of the model.
    pub fn sensor(&self) -> Result<String> {
        match &self.data.sensor {
            Some(s) => Ok(s.clone()),
            None if self.model.sensors.len() == 1 => Ok(self.model.sensors[0].id.clone()),
            None => Err(Error::config("data.sensor", "required when the model has several sensors")),
        }
    }

    /// Schema-level checks plus existence of every input file.
    pub fn validate(&self) -> Result<()> {
        if self.data.train.is_empty() {
            return Err(Error::config("data.train", "at least one cube is required"));
        }
        for (i, p) in self.data.train.iter().enumerate() {
            if !p.is_file() {
                return Err(Error::config(format!("data.train[{i}]"), format!("no such file {}", p.display())));
            }
        }
        if self.data.patch == 0 {
            return Err(Error::config("data.patch", "must be positive"));
        }
        if self.data.scales.is_empty() {
            return Err(Error::config("data.scales", "at least one scale is required"));
        }
        for (i, &(f, s)) in self.data.scales.iter().enumerate() {
            if f == 0 || s == 0 {
                return Err(Error::config(format!("data.scales[{i}]"), "factor and stride must be positive"));
            }
        }
        if self.data.center_crop == Some(0) {
            return Err(Error::config("data.center_crop", "must be positive"));
        }
        if self.output.checkpoint_every == Some(0) {
            return Err(Error::config("output.checkpoint_every", "must be positive"));
        }
        self.model.validate()?;
        self.train.validate()?;
        let sensor = self.sensor()?;
        let spec = self
            .model
            .sensor(&sensor)
            .ok_or_else(|| Error::config("data.sensor", format!("sensor {sensor:?} is not declared in model.sensors")))?;
        if self.train.mode == crate::train::TrainMode::Ssl && self.train.ssl_n >= spec.bands {
            return Err(Error::config(
                "train.ssl_n",
                format!("must be smaller than the band count {}", spec.bands),
            ));
        }
        if let Some(c) = self.train.crop {
            if c > self.data.patch {
                return Err(Error::config("train.crop", "larger than data.patch"));
            }
        }
        Ok(())
    }
}

/// Best-effort dotted path for a parse error: the table header in force at the
/// reported line plus the key on that line.
fn unknown_key_path(text: &str, e: &toml::de::Error) -> Option<String> {
    let start = e.span()?.start;
    let mut table = String::new();
    let mut offset = 0;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('[') && !t.starts_with("[[") {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        offset += line.len() + 1;
        if start < offset {
            let key = match t.split_once('=') {
                Some((k, _)) if !t.starts_with('[') => k.trim().trim_matches('"'),
                _ => "",
            };
            return Some(match (table.is_empty(), key.is_empty()) {
                (_, true) => table,
                (true, false) => key.to_string(),
                (false, false) => format!("{table}.{key}"),
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
train = ["a.hsr"]

[model]
p1 = 8
p2 = 16
sensors = [{ id = "s", bands = 6 }]

[train]
batch_size = 2
noise = "iid:25"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.data.normalization, Normalization::Percentile);
        assert_eq!(cfg.model.p1, 8);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.sensor().unwrap(), "s");
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = MINIMAL.replace("batch_size = 2", "batch_size = 2\nbatchsize = 3");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "train.batchsize"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_dataset_is_validation_error() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "data.train[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ssl_n_checked_against_sensor() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.hsr");
        std::fs::write(&file, b"").unwrap();
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.data.train = vec![file];
        cfg.train.mode = crate::train::TrainMode::Ssl;
        cfg.train.ssl_n = 6;
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "train.ssl_n"),
            other => panic!("{other:?}"),
        }
        cfg.train.ssl_n = 2;
        cfg.validate().unwrap();
    }
}
