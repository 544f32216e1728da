//! Optional TOML defaults, e.g.
//!
//! ```toml
//! [train]
//! epochs = 30
//! optimizer = "sgd"
//!
//! [portrait]
//! sigma = 6.0
//! feather = 2
//! ```
//!
//! Command-line flags override anything set here.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub portrait: PortraitSection,
    #[serde(default)]
    pub blur: BlurSection,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub optimizer: Option<String>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PortraitSection {
    pub sigma: Option<f64>,
    pub feather: Option<usize>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlurSection {
    pub sigma: Option<f64>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let cfg: FileConfig = toml::from_str("[portrait]\nsigma = 3.5\n").unwrap();
        assert_eq!(cfg.portrait.sigma, Some(3.5));
        assert_eq!(cfg.train, TrainSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[portrait]\nsigam = 3.5\n").is_err());
    }
}
