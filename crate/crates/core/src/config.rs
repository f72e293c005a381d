//! Run configuration, read from and echoed as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{DiscriminatorSpec, GeneratorConfig};
use crate::objectives::LossWeights;
use crate::trainer::TrainConfig;
use crate::volume::WindowSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest listing paired and unpaired slices.
    pub manifest: PathBuf,
    pub use_paired: bool,
    pub use_unpaired: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: PathBuf::from("data/manifest.txt"), use_paired: true, use_unpaired: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorChoice {
    /// One of D1..D5.
    pub name: String,
    /// Divides every hidden width; 1 keeps the published widths.
    pub width_divisor: usize,
}

impl Default for DiscriminatorChoice {
    fn default() -> Self {
        Self { name: "D1".into(), width_divisor: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub run_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { run_dir: PathBuf::from("runs/default") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub slice_size: usize,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorChoice,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub window: WindowSpec,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn default_for_size(slice_size: usize) -> Self {
        Self { slice_size, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.slice_size == 0 {
            cfg.slice_size = 256;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative data and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.manifest, &mut cfg.output.run_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn discriminator_spec(&self) -> Result<DiscriminatorSpec> {
        if self.discriminator.width_divisor == 0 {
            return Err(Error::Config("discriminator.width_divisor must be at least 1".into()));
        }
        Ok(DiscriminatorSpec::preset(&self.discriminator.name)?.narrowed(self.discriminator.width_divisor))
    }

    /// Checks every section; `check_paths` also requires the manifest to exist.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        let conf = |e: Error| Error::Config(e.to_string());
        self.discriminator_spec()?.validate().map_err(conf)?;
        self.generator.validate().map_err(conf)?;
        self.loss.validate().map_err(conf)?;
        self.train.validate().map_err(conf)?;
        if self.slice_size < 16 || !self.slice_size.is_multiple_of(4) {
            return Err(Error::Config(format!("slice_size must be a multiple of 4 and at least 16, got {}", self.slice_size)));
        }
        if !(self.window.length > 0.0) {
            return Err(Error::Config("window.length must be positive".into()));
        }
        if !self.data.use_paired && !self.data.use_unpaired {
            return Err(Error::Config("at least one of data.use_paired and data.use_unpaired must be set".into()));
        }
        if check_paths && !self.data.manifest.is_file() {
            return Err(Error::Config(format!("manifest {} does not exist", self.data.manifest.display())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default_for_size(256);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate(false).unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("[discriminator]\nname = \"D4\"\n").unwrap();
        assert_eq!(cfg.discriminator.name, "D4");
        assert_eq!(cfg.loss.lambda_cyc, 10.0);
        assert_eq!(cfg.train.alpha, 2e-4);
        assert_eq!(cfg.slice_size, 256);
    }

    #[test]
    fn unknown_discriminator_lists_valid_names() {
        let cfg = RunConfig::from_toml("[discriminator]\nname = \"D9\"\n").unwrap();
        let msg = cfg.validate(false).unwrap_err().to_string();
        assert!(msg.contains("D1, D2, D3, D4, D5"), "{msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 1.0\n").is_err());
    }
}
