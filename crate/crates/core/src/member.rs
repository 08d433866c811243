//! One scene of the dataset: an HR target with its mask and the LR
//! acquisitions of the same tile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Clearance, Image, QualityMask, Threshold};
use crate::{HR_SIZE, LR_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Band {
    Red,
    Nir,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Red, Band::Nir];

    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Red => "RED",
            Band::Nir => "NIR",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RED" => Ok(Band::Red),
            "NIR" => Ok(Band::Nir),
            other => Err(format!("unknown band {other:?}")),
        }
    }
}

/// Admission thresholds. Defaults: LR ≥ 0.6, HR ≥ 0.75, at least 9 LRs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdmissionRules {
    pub lr_min_clearance: Threshold,
    pub hr_min_clearance: Threshold,
    pub min_lr_count: usize,
}

impl Default for AdmissionRules {
    fn default() -> Self {
        Self {
            lr_min_clearance: Threshold::from_fraction(0.6).expect("valid"),
            hr_min_clearance: Threshold::from_fraction(0.75).expect("valid"),
            min_lr_count: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrFrame {
    pub image: Image,
    pub mask: QualityMask,
    pub index: u32,
}

impl LrFrame {
    pub fn clearance(&self) -> Clearance {
        self.mask.clearance()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemberError {
    #[error("{what} is {width}x{height}, expected {expected}x{expected}")]
    Dimensions {
        what: String,
        width: usize,
        height: usize,
        expected: usize,
    },
    #[error("member has {count} LR frames, at least {min} required")]
    TooFewLr { count: usize, min: usize },
    #[error("HR clearance {0} is below the threshold")]
    HrClearance(Clearance),
    #[error("LR frame {index} clearance {clearance} is below the threshold")]
    LrClearance { index: u32, clearance: Clearance },
    #[error("duplicate acquisition index {0}")]
    DuplicateIndex(u32),
}

/// A validated scene. Construction enforces the admission rules it was
/// built with.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMember {
    band: Band,
    tile_id: String,
    hr: Image,
    hr_mask: QualityMask,
    lrs: Vec<LrFrame>,
}

impl DataMember {
    pub fn new(
        band: Band,
        tile_id: impl Into<String>,
        hr: Image,
        hr_mask: QualityMask,
        lrs: Vec<LrFrame>,
        rules: &AdmissionRules,
    ) -> Result<Self, MemberError> {
        check_dims("HR image", hr.dims(), HR_SIZE)?;
        check_dims("HR mask", hr_mask.dims(), HR_SIZE)?;
        for lr in &lrs {
            check_dims(&format!("LR image {}", lr.index), lr.image.dims(), LR_SIZE)?;
            check_dims(&format!("LR mask {}", lr.index), lr.mask.dims(), LR_SIZE)?;
        }
        if lrs.len() < rules.min_lr_count {
            return Err(MemberError::TooFewLr {
                count: lrs.len(),
                min: rules.min_lr_count,
            });
        }
        let hr_clear = hr_mask.clearance();
        if !hr_clear.meets(rules.hr_min_clearance) {
            return Err(MemberError::HrClearance(hr_clear));
        }
        let mut seen = std::collections::BTreeSet::new();
        for lr in &lrs {
            let c = lr.clearance();
            if !c.meets(rules.lr_min_clearance) {
                return Err(MemberError::LrClearance {
                    index: lr.index,
                    clearance: c,
                });
            }
            if !seen.insert(lr.index) {
                return Err(MemberError::DuplicateIndex(lr.index));
            }
        }
        Ok(Self {
            band,
            tile_id: tile_id.into(),
            hr,
            hr_mask,
            lrs,
        })
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn tile_id(&self) -> &str {
        &self.tile_id
    }

    /// `BAND/tile_id`, unique within a dataset.
    pub fn key(&self) -> String {
        format!("{}/{}", self.band, self.tile_id)
    }

    pub fn hr(&self) -> &Image {
        &self.hr
    }

    pub fn hr_mask(&self) -> &QualityMask {
        &self.hr_mask
    }

    pub fn lrs(&self) -> &[LrFrame] {
        &self.lrs
    }
}

fn check_dims(what: &str, dims: (usize, usize), expected: usize) -> Result<(), MemberError> {
    if dims != (expected, expected) {
        return Err(MemberError::Dimensions {
            what: what.to_string(),
            width: dims.0,
            height: dims.1,
            expected,
        });
    }
    Ok(())
}
