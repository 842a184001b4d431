//! Run configuration: one TOML file merging scene, flow, visualization,
//! training and dataset settings with the master seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowviz::FlowNormalization;
use crate::optflow::FlowParams;
use crate::scenegen::SceneConfig;
use crate::segnet::TrainParams;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "ORCHARDSEG_CONFIG";

/// Which flow the network is fed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    /// Horn–Schunck estimate from the rendered frames.
    #[default]
    Estimated,
    /// Exact rendered flow.
    GroundTruth,
}

impl std::str::FromStr for FlowSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(FlowSource::Estimated),
            "ground_truth" => Ok(FlowSource::GroundTruth),
            other => Err(Error::config("flow_source", format!("unknown flow source `{other}`"))),
        }
    }
}

/// Dataset sizes and composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Minimum tree-row count for test scenes.
    pub test_min_rows: u32,
    pub flow_source: FlowSource,
    /// Frames are rendered and flow is estimated at this multiple of the
    /// image size, then box-filtered down; sub-pixel parallax at small image
    /// sizes is otherwise lost in estimation noise.
    pub supersample: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 400,
            val: 50,
            test: 50,
            test_min_rows: 1,
            flow_source: FlowSource::Estimated,
            supersample: 2,
        }
    }
}

impl DataConfig {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizConfig {
    pub normalization: FlowNormalization,
}

impl Default for VizConfig {
    /// Parallax at 64×64 rarely exceeds two pixels, so the color scale
    /// saturates there rather than at the library default meant for larger
    /// frames.
    fn default() -> Self {
        Self {
            normalization: FlowNormalization::Fixed(2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub flow: FlowParams,
    pub viz: VizConfig,
    pub train: TrainParams,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default().with_image_size(64, 64),
            flow: FlowParams::default(),
            viz: VizConfig::default(),
            train: TrainParams::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        if let FlowNormalization::Fixed(m) = self.viz.normalization {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::config("normalization", "fixed max magnitude must be > 0"));
            }
        }
        if self.data.test_min_rows > self.scene.rows_range.hi {
            return Err(Error::config("test_min_rows", "exceeds the largest row count"));
        }
        if !(1..=8).contains(&self.data.supersample) {
            return Err(Error::config("supersample", "must be between 1 and 8"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: "toml",
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable fingerprint of the settings that shape generated data.
    pub fn data_digest(&self) -> String {
        let json = serde_json::to_string(&(&self.seed, &self.scene, &self.flow, &self.viz, &self.data))
            .expect("config serializes");
        crate::scenegen::fnv1a_hex(json.as_bytes())
    }
}
