//! Run configuration: a single TOML file, unknown keys rejected.
//!
//! ```toml
//! output_dir = "run"
//!
//! [simulate]
//! seed = 7
//! members = 20
//!
//! [assembly]
//! exclude = ["NIR/imgset0003"]
//!
//! [split]
//! seed = 1
//!
//! [train]
//! epochs = 20
//! seed = 3
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::fs;
use std::path::{Path, PathBuf};

use misr_core::assembly::SplitConfig;
use misr_core::neuralnet::TrainConfig;
use misr_core::simgen::ParamsDistribution;
use misr_core::{AdmissionRules, Threshold};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Every artifact lands here.
    pub output_dir: PathBuf,
    /// Dataset root in ingestion layout. Defaults to `<output_dir>/data`.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub assembly: AssemblySection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub seed: u64,
    pub members: usize,
    pub n_lr_min: usize,
    pub n_lr_max: usize,
    pub params: ParamsDistribution,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            seed: 0,
            members: 20,
            n_lr_min: 9,
            n_lr_max: 14,
            params: ParamsDistribution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssemblySection {
    pub lr_min_clearance: f64,
    pub hr_min_clearance: f64,
    pub min_lr_count: usize,
    /// LR frames fed to the network.
    pub input_count: usize,
    /// `BAND/tile_id` keys left out of both splits.
    pub exclude: Vec<String>,
}

impl Default for AssemblySection {
    fn default() -> Self {
        Self {
            lr_min_clearance: 0.6,
            hr_min_clearance: 0.75,
            min_lr_count: 9,
            input_count: 5,
            exclude: Vec::new(),
        }
    }
}

impl AssemblySection {
    pub fn rules(&self) -> Result<AdmissionRules, CliError> {
        let threshold = |name: &str, v: f64| {
            Threshold::from_fraction(v)
                .ok_or_else(|| CliError::Config(format!("assembly.{name} = {v} is not in [0, 1]")))
        };
        Ok(AdmissionRules {
            lr_min_clearance: threshold("lr_min_clearance", self.lr_min_clearance)?,
            hr_min_clearance: threshold("hr_min_clearance", self.hr_min_clearance)?,
            min_lr_count: self.min_lr_count,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitConfig::default();
        Self {
            seed: d.seed,
            test_fraction: d.test_fraction,
        }
    }
}

impl SplitSection {
    pub fn config(&self) -> SplitConfig {
        SplitConfig {
            seed: self.seed,
            test_fraction: self.test_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Write `LR bicubic | SR | HR` strips for the best and worst members.
    pub dump_images: bool,
    /// How many members to dump at each end of the ranking.
    pub dump_count: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            dump_images: true,
            dump_count: 1,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.data_root = cfg.data_root.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    pub fn params_path(&self) -> PathBuf {
        self.output_dir.join("params.bin")
    }

    pub fn history_path(&self) -> PathBuf {
        self.output_dir.join("history.csv")
    }
}
