//! Dataset assembly: clearance filtering, member admission, HR target
//! selection, network input selection and the tile-grouped split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::member::{AdmissionRules, Band, DataMember, LrFrame, MemberError};
use crate::raster::{Clearance, Image, QualityMask};
use crate::resample::blockmean_downscale_plane;
use crate::seed::{derive, rng, Stream};
use crate::{HR_SIZE, LR_SIZE};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("structural error: {0}")]
    Structure(String),
    #[error("invalid split configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Member(#[from] MemberError),
}

pub type Result<T, E = AssemblyError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    Ingested { root: PathBuf },
    Subset { of: Box<Provenance>, part: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub members: Vec<DataMember>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Checks that `band/tile_id` keys are unique.
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for m in &self.members {
            if !seen.insert(m.key()) {
                return Err(AssemblyError::Structure(format!("duplicate member {}", m.key())));
            }
        }
        Ok(())
    }
}

/// An admission rule that a candidate tile failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectionRule {
    #[serde(rename = "min LR count")]
    MinLrCount,
    #[serde(rename = "HR clearance")]
    HrClearance,
}

impl fmt::Display for RejectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectionRule::MinLrCount => "min LR count",
            RejectionRule::HrClearance => "HR clearance",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub rules: Vec<RejectionRule>,
    pub usable_lr: usize,
    pub usable_hr: usize,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.rules.iter().map(|r| r.to_string()).collect();
        write!(
            f,
            "{} ({} usable LR, {} usable HR)",
            names.join(", "),
            self.usable_lr,
            self.usable_hr
        )
    }
}

/// Outcome of admitting one tile.
#[derive(Clone, Debug, PartialEq)]
pub enum Admission {
    Admitted {
        member: DataMember,
        /// Index into the candidate HR list.
        selected_hr: usize,
        /// Acquisition indices of LR candidates dropped for low clearance.
        dropped_lr: Vec<u32>,
    },
    Rejected(Rejection),
}

impl Admission {
    pub fn member(&self) -> Option<&DataMember> {
        match self {
            Admission::Admitted { member, .. } => Some(member),
            Admission::Rejected(_) => None,
        }
    }

    pub fn rejection(&self) -> Option<&Rejection> {
        match self {
            Admission::Rejected(r) => Some(r),
            Admission::Admitted { .. } => None,
        }
    }
}

pub type LrCandidate = (Image, QualityMask, u32);
pub type HrCandidate = (Image, QualityMask);

/// Filters candidates by clearance and builds a member, or reports which
/// rules the tile failed.
pub fn admit_member(
    candidate_hrs: Vec<HrCandidate>,
    candidate_lrs: Vec<LrCandidate>,
    band: Band,
    tile_id: &str,
    rules: &AdmissionRules,
) -> Result<Admission> {
    for (i, (img, mask)) in candidate_hrs.iter().enumerate() {
        expect_dims(&format!("HR candidate {i}"), img.dims(), mask.dims(), HR_SIZE)?;
    }
    for (img, mask, index) in &candidate_lrs {
        expect_dims(&format!("LR candidate {index}"), img.dims(), mask.dims(), LR_SIZE)?;
    }

    let mut dropped_lr = Vec::new();
    let mut lrs = Vec::new();
    for (image, mask, index) in candidate_lrs {
        if mask.clearance().meets(rules.lr_min_clearance) {
            lrs.push(LrFrame { image, mask, index });
        } else {
            dropped_lr.push(index);
        }
    }
    let hr_keep: Vec<usize> = candidate_hrs
        .iter()
        .enumerate()
        .filter(|(_, (_, m))| m.clearance().meets(rules.hr_min_clearance))
        .map(|(i, _)| i)
        .collect();

    let mut failed = Vec::new();
    if lrs.len() < rules.min_lr_count {
        failed.push(RejectionRule::MinLrCount);
    }
    if hr_keep.is_empty() {
        failed.push(RejectionRule::HrClearance);
    }
    if !failed.is_empty() {
        return Ok(Admission::Rejected(Rejection {
            rules: failed,
            usable_lr: lrs.len(),
            usable_hr: hr_keep.len(),
        }));
    }

    let lr_images: Vec<Image> = lrs.iter().map(|f| f.image.clone()).collect();
    let kept: Vec<&HrCandidate> = hr_keep.iter().map(|&i| &candidate_hrs[i]).collect();
    let pick = select_hr_refs(&kept, &lr_images)?;
    let selected_hr = hr_keep[pick];
    let (hr, hr_mask) = candidate_hrs
        .into_iter()
        .nth(selected_hr)
        .expect("selected index is in range");
    let member = DataMember::new(band, tile_id, hr, hr_mask, lrs, rules)?;
    Ok(Admission::Admitted {
        member,
        selected_hr,
        dropped_lr,
    })
}

fn expect_dims(
    what: &str,
    img: (usize, usize),
    mask: (usize, usize),
    size: usize,
) -> Result<()> {
    if img != (size, size) || mask != (size, size) {
        return Err(AssemblyError::Structure(format!(
            "{what}: image {img:?}, mask {mask:?}, expected {size}x{size}"
        )));
    }
    Ok(())
}

/// Picks the HR target: highest clearance; ties go to the smallest mean
/// (over LR frames) all-pixel MSE between the block-mean downscaled HR and
/// the LR; remaining ties to the lowest index.
pub fn select_hr(hrs: &[HrCandidate], lrs: &[Image]) -> Result<usize> {
    let refs: Vec<&HrCandidate> = hrs.iter().collect();
    select_hr_refs(&refs, lrs)
}

fn select_hr_refs(hrs: &[&HrCandidate], lrs: &[Image]) -> Result<usize> {
    if hrs.is_empty() || lrs.is_empty() {
        return Err(AssemblyError::Structure(
            "HR selection needs at least one HR and one LR".into(),
        ));
    }
    let clearances: Vec<Clearance> = hrs.iter().map(|(_, m)| m.clearance()).collect();
    let best = *clearances.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..hrs.len()).filter(|&i| clearances[i] == best).collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    let mut choice = tied[0];
    let mut choice_err = f64::INFINITY;
    for &i in &tied {
        let err = downscaled_mse(&hrs[i].0, lrs)?;
        if err < choice_err {
            choice = i;
            choice_err = err;
        }
    }
    Ok(choice)
}

/// Mean over `lrs` of the plain pixelwise MSE against the downscaled `hr`.
pub fn downscaled_mse(hr: &Image, lrs: &[Image]) -> Result<f64> {
    let down = blockmean_downscale_plane(hr.plane())
        .map_err(|e| AssemblyError::Structure(e.to_string()))?;
    let mut total = 0.0;
    for lr in lrs {
        if lr.dims() != down.dims() {
            return Err(AssemblyError::Structure(format!(
                "LR {:?} does not match downscaled HR {:?}",
                lr.dims(),
                down.dims()
            )));
        }
        let sse: f64 = down
            .as_slice()
            .iter()
            .zip(lr.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += sse / down.as_slice().len() as f64;
    }
    Ok(total / lrs.len() as f64)
}

/// The `n` clearest LR frames, clearest first, ties by earlier acquisition.
/// Returns positions in `member.lrs()`.
pub fn select_clearest(member: &DataMember, n: usize) -> Result<Vec<usize>> {
    clearest_indices(
        &member
            .lrs()
            .iter()
            .map(|lr| (lr.clearance(), lr.index))
            .collect::<Vec<_>>(),
        n,
    )
}

/// [`select_clearest`] over bare `(clearance, acquisition index)` pairs.
pub fn clearest_indices(frames: &[(Clearance, u32)], n: usize) -> Result<Vec<usize>> {
    if n > frames.len() {
        return Err(AssemblyError::Structure(format!(
            "asked for {n} LR frames, only {} available",
            frames.len()
        )));
    }
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| {
        frames[b]
            .0
            .cmp(&frames[a].0)
            .then(frames[a].1.cmp(&frames[b].1))
    });
    order.truncate(n);
    Ok(order)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            test_fraction: 0.2,
        }
    }
}

/// Decides train (`false`) / test (`true`) per entry from tile ids alone.
///
/// Tiles are sorted, shuffled with a generator seeded from `cfg.seed`, and
/// whole tiles move to the test side until it holds at least
/// `round(test_fraction · total)` entries.
pub fn plan_split(tile_ids: &[&str], cfg: &SplitConfig) -> Result<Vec<bool>> {
    let total = tile_ids.len();
    if total == 0 {
        return Err(AssemblyError::Config("empty dataset".into()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(AssemblyError::Config(format!(
            "test fraction {} outside (0, 1)",
            cfg.test_fraction
        )));
    }
    let target = (cfg.test_fraction * total as f64).round() as usize;
    if target == 0 {
        return Err(AssemblyError::Config(format!(
            "test fraction {} of {total} members leaves the test side empty",
            cfg.test_fraction
        )));
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in tile_ids.iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    let mut r = rng(derive(cfg.seed, Stream::Split, 0));
    // Fisher-Yates, spelled out so the permutation only depends on the generator.
    for i in (1..order.len()).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }

    let mut is_test = vec![false; total];
    let mut count = 0;
    for group in order {
        if count >= target {
            break;
        }
        count += group.len();
        for i in group {
            is_test[i] = true;
        }
    }
    if count == total {
        return Err(AssemblyError::Config(format!(
            "test fraction {} of {total} members leaves the training side empty",
            cfg.test_fraction
        )));
    }
    Ok(is_test)
}

/// Splits into `(train, test)` keeping all bands of a tile on one side.
pub fn split_dataset(ds: Dataset, cfg: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let ids: Vec<&str> = ds.members.iter().map(|m| m.tile_id()).collect();
    let plan = plan_split(&ids, cfg)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (member, is_test) in ds.members.into_iter().zip(plan) {
        if is_test {
            test.push(member);
        } else {
            train.push(member);
        }
    }
    let part = |name: &str, members| Dataset {
        members,
        provenance: Provenance::Subset {
            of: Box::new(ds.provenance.clone()),
            part: name.to_string(),
        },
    };
    Ok((part("train", train), part("test", test)))
}
