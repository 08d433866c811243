//! On-disk dataset layout and the JSON manifest.
//!
//! ```text
//! root/
//!   RED/<tile_id>/HR.png  SM.png  LR000.png  QM000.png  LR001.png  QM001.png ...
//!   NIR/<tile_id>/...
//! ```
//!
//! `LRnnn.png` pairs with `QMnnn.png` through the numeric suffix, which is
//! also the acquisition index. Extra HR candidates are `HRn.png` with
//! `SMn.png`. The manifest records admission decisions, clearances, the
//! selected HR, the network inputs and the split side of every tile.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    admit_member, clearest_indices, Admission, AssemblyError, HrCandidate, LrCandidate,
    Provenance, RejectionRule, SplitConfig,
};
use crate::member::{AdmissionRules, Band, DataMember, LrFrame, MemberError};
use crate::raster::{Clearance, Image, QualityMask, RasterError, Threshold};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("missing file {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Member(#[from] MemberError),
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("layout error: {0}")]
    Layout(String),
}

pub type Result<T, E = LayoutError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LayoutError + '_ {
    move |source| LayoutError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Files of one tile directory.
#[derive(Clone, Debug, PartialEq)]
pub struct TileFiles {
    pub band: Band,
    pub tile_id: String,
    /// Relative to the root, `BAND/tile_id`.
    pub dir: PathBuf,
    /// `(image, mask)` file names.
    pub hr: Vec<(String, String)>,
    /// `(acquisition index, image, mask)` file names, ascending index.
    pub lr: Vec<(u32, String, String)>,
}

impl TileFiles {
    pub fn key(&self) -> String {
        format!("{}/{}", self.band, self.tile_id)
    }
}

fn numbered(name: &str, prefix: &str) -> Option<Option<u32>> {
    let stem = name.strip_prefix(prefix)?.strip_suffix(".png")?;
    if stem.is_empty() {
        return Some(None);
    }
    if stem.bytes().all(|b| b.is_ascii_digit()) {
        return stem.parse().ok().map(Some);
    }
    None
}

fn digits_of(name: &str, prefix: &str) -> String {
    name.strip_prefix(prefix)
        .and_then(|s| s.strip_suffix(".png"))
        .unwrap_or_default()
        .to_string()
}

/// Lists the tile directories under `root`, sorted by band then tile id.
/// Every image must have its mask partner.
pub fn scan_root(root: &Path) -> Result<Vec<TileFiles>> {
    if !root.is_dir() {
        return Err(LayoutError::Missing(root.to_path_buf()));
    }
    let mut tiles = Vec::new();
    for band in Band::ALL {
        let band_dir = root.join(band.as_str());
        if !band_dir.is_dir() {
            continue;
        }
        let mut names: Vec<String> = fs::read_dir(&band_dir)
            .map_err(io_err(&band_dir))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for tile_id in names {
            let dir = band_dir.join(&tile_id);
            tiles.push(scan_tile(&dir, band, &tile_id, root)?);
        }
    }
    Ok(tiles)
}

fn scan_tile(dir: &Path, band: Band, tile_id: &str, root: &Path) -> Result<TileFiles> {
    let mut files: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let present = |name: &str| files.iter().any(|f| f == name);

    let mut hr = BTreeMap::new();
    let mut lr = BTreeMap::new();
    for f in &files {
        if let Some(n) = numbered(f, "HR") {
            let mask = format!("SM{}.png", digits_of(f, "HR"));
            if !present(&mask) {
                return Err(LayoutError::Missing(dir.join(mask)));
            }
            // HR.png sorts before HR0.png, HR1.png, ...
            hr.insert(n.map_or(0, |v| u64::from(v) + 1), (f.clone(), mask));
        } else if let Some(Some(n)) = numbered(f, "LR") {
            let mask = format!("QM{}.png", digits_of(f, "LR"));
            if !present(&mask) {
                return Err(LayoutError::Missing(dir.join(mask)));
            }
            if lr.insert(n, (f.clone(), mask)).is_some() {
                return Err(LayoutError::Layout(format!(
                    "{}: acquisition index {n} appears twice",
                    dir.display()
                )));
            }
        }
    }
    // masks without an image are also a broken layout
    for f in &files {
        if let Some(Some(n)) = numbered(f, "QM") {
            if !lr.contains_key(&n) {
                return Err(LayoutError::Missing(dir.join(format!("LR{}.png", digits_of(f, "QM")))));
            }
        }
    }
    if hr.is_empty() {
        return Err(LayoutError::Missing(dir.join("HR.png")));
    }
    Ok(TileFiles {
        band,
        tile_id: tile_id.to_string(),
        dir: dir.strip_prefix(root).unwrap_or(dir).to_path_buf(),
        hr: hr.into_values().collect(),
        lr: lr.into_iter().map(|(n, (i, m))| (n, i, m)).collect(),
    })
}

pub fn load_candidates(root: &Path, tile: &TileFiles) -> Result<(Vec<HrCandidate>, Vec<LrCandidate>)> {
    let dir = root.join(&tile.dir);
    let mut hrs = Vec::with_capacity(tile.hr.len());
    for (img, mask) in &tile.hr {
        hrs.push((load_image(&dir.join(img))?, load_mask(&dir.join(mask))?));
    }
    let mut lrs = Vec::with_capacity(tile.lr.len());
    for (index, img, mask) in &tile.lr {
        lrs.push((load_image(&dir.join(img))?, load_mask(&dir.join(mask))?, *index));
    }
    Ok((hrs, lrs))
}

fn load_image(path: &Path) -> Result<Image> {
    if !path.is_file() {
        return Err(LayoutError::Missing(path.to_path_buf()));
    }
    Ok(Image::load(path)?)
}

fn load_mask(path: &Path) -> Result<QualityMask> {
    if !path.is_file() {
        return Err(LayoutError::Missing(path.to_path_buf()));
    }
    Ok(QualityMask::load(path)?)
}

pub fn lr_file_names(index: u32) -> (String, String) {
    (format!("LR{index:03}.png"), format!("QM{index:03}.png"))
}

/// Writes one member as `root/BAND/tile_id/`.
pub fn write_member(root: &Path, member: &DataMember) -> Result<PathBuf> {
    let dir = root.join(member.band().as_str()).join(member.tile_id());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_bytes(&dir.join("HR.png"), &member.hr().encode_png()?)?;
    write_bytes(&dir.join("SM.png"), &member.hr_mask().encode_png()?)?;
    for lr in member.lrs() {
        let (img, mask) = lr_file_names(lr.index);
        write_bytes(&dir.join(img), &lr.image.encode_png()?)?;
        write_bytes(&dir.join(mask), &lr.mask.encode_png()?)?;
    }
    Ok(dir)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberStatus {
    Admitted,
    Rejected,
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Acquisition index for LR frames; position among HR candidates for HR.
    pub index: u32,
    pub image: String,
    pub mask: String,
    pub clear: usize,
    pub total: usize,
    pub clearance: f64,
    pub kept: bool,
}

impl CandidateRecord {
    fn new(index: u32, image: &str, mask: &str, c: Clearance, kept: bool) -> Self {
        Self {
            index,
            image: image.to_string(),
            mask: mask.to_string(),
            clear: c.clear,
            total: c.total,
            clearance: c.fraction(),
            kept,
        }
    }

    pub fn clearance(&self) -> Clearance {
        Clearance {
            clear: self.clear,
            total: self.total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub key: String,
    pub band: Band,
    pub tile_id: String,
    pub dir: String,
    pub status: MemberStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejection: Vec<RejectionRule>,
    pub hr: Vec<CandidateRecord>,
    pub selected_hr: Option<usize>,
    pub lr: Vec<CandidateRecord>,
    /// Acquisition indices of the network inputs, clearest first.
    pub inputs: Vec<u32>,
    pub split: Option<SplitSide>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulesRecord {
    pub lr_min_clearance: f64,
    pub hr_min_clearance: f64,
    pub min_lr_count: usize,
    pub input_count: usize,
}

impl RulesRecord {
    pub fn new(rules: &AdmissionRules, input_count: usize) -> Self {
        Self {
            lr_min_clearance: rules.lr_min_clearance.fraction(),
            hr_min_clearance: rules.hr_min_clearance.fraction(),
            min_lr_count: rules.min_lr_count,
            input_count,
        }
    }

    pub fn rules(&self) -> AdmissionRules {
        AdmissionRules {
            lr_min_clearance: Threshold::from_fraction(self.lr_min_clearance)
                .unwrap_or_else(|| AdmissionRules::default().lr_min_clearance),
            hr_min_clearance: Threshold::from_fraction(self.hr_min_clearance)
                .unwrap_or_else(|| AdmissionRules::default().hr_min_clearance),
            min_lr_count: self.min_lr_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Dataset root the member directories are relative to.
    pub root: PathBuf,
    pub provenance: Provenance,
    pub rules: RulesRecord,
    pub members: Vec<MemberRecord>,
    pub split: Option<SplitConfig>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        if !path.is_file() {
            return Err(LayoutError::Missing(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| LayoutError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(LayoutError::Manifest {
                path: path.to_path_buf(),
                message: format!("unsupported version {}", manifest.version),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| LayoutError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        text.push('\n');
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_bytes(path, text.as_bytes())
    }

    pub fn admitted(&self) -> impl Iterator<Item = &MemberRecord> {
        self.members
            .iter()
            .filter(|m| m.status == MemberStatus::Admitted)
    }

    pub fn on_side(&self, side: SplitSide) -> impl Iterator<Item = &MemberRecord> {
        self.admitted().filter(move |m| m.split == Some(side))
    }

    /// Assigns split sides to admitted members; everything else gets none.
    pub fn apply_split(&mut self, cfg: &SplitConfig) -> Result<()> {
        let admitted: Vec<usize> = (0..self.members.len())
            .filter(|&i| self.members[i].status == MemberStatus::Admitted)
            .collect();
        let ids: Vec<&str> = admitted
            .iter()
            .map(|&i| self.members[i].tile_id.as_str())
            .collect();
        let plan = crate::assembly::plan_split(&ids, cfg)?;
        for m in &mut self.members {
            m.split = None;
        }
        for (&i, is_test) in admitted.iter().zip(plan) {
            self.members[i].split = Some(if is_test { SplitSide::Test } else { SplitSide::Train });
        }
        self.split = Some(*cfg);
        Ok(())
    }

    /// Loads the selected HR and the kept LR frames of an admitted member.
    pub fn load_member(&self, record: &MemberRecord) -> Result<DataMember> {
        let dir = self.root.join(&record.dir);
        let hr_index = record.selected_hr.ok_or_else(|| {
            LayoutError::Layout(format!("{} has no selected HR", record.key))
        })?;
        let hr_rec = record.hr.get(hr_index).ok_or_else(|| {
            LayoutError::Layout(format!("{} selects missing HR {hr_index}", record.key))
        })?;
        let hr = load_image(&dir.join(&hr_rec.image))?;
        let hr_mask = load_mask(&dir.join(&hr_rec.mask))?;
        let mut lrs = Vec::new();
        for lr in record.lr.iter().filter(|l| l.kept) {
            lrs.push(LrFrame {
                image: load_image(&dir.join(&lr.image))?,
                mask: load_mask(&dir.join(&lr.mask))?,
                index: lr.index,
            });
        }
        Ok(DataMember::new(
            record.band,
            &record.tile_id,
            hr,
            hr_mask,
            lrs,
            &self.rules.rules(),
        )?)
    }
}

/// Runs admission over every tile under `root` and records the outcome.
/// Tiles whose `BAND/tile_id` key is in `exclude` are recorded as excluded
/// without being read.
pub fn assemble_root(
    root: &Path,
    rules: &AdmissionRules,
    input_count: usize,
    exclude: &[String],
    provenance: Provenance,
) -> Result<Manifest> {
    let tiles = scan_root(root)?;
    let mut members = Vec::with_capacity(tiles.len());
    for tile in &tiles {
        let key = tile.key();
        let dir = tile.dir.to_string_lossy().replace('\\', "/");
        if exclude.iter().any(|e| e == &key) {
            members.push(MemberRecord {
                key,
                band: tile.band,
                tile_id: tile.tile_id.clone(),
                dir,
                status: MemberStatus::Excluded,
                rejection: Vec::new(),
                hr: Vec::new(),
                selected_hr: None,
                lr: Vec::new(),
                inputs: Vec::new(),
                split: None,
            });
            continue;
        }
        let (hrs, lrs) = load_candidates(root, tile)?;
        let hr_clear: Vec<Clearance> = hrs.iter().map(|(_, m)| m.clearance()).collect();
        let lr_clear: Vec<Clearance> = lrs.iter().map(|(_, m, _)| m.clearance()).collect();
        let admission = admit_member(hrs, lrs, tile.band, &tile.tile_id, rules)?;

        let hr_records = tile
            .hr
            .iter()
            .zip(&hr_clear)
            .enumerate()
            .map(|(i, ((img, mask), &c))| {
                CandidateRecord::new(i as u32, img, mask, c, c.meets(rules.hr_min_clearance))
            })
            .collect();
        let lr_records: Vec<CandidateRecord> = tile
            .lr
            .iter()
            .zip(&lr_clear)
            .map(|((index, img, mask), &c)| {
                CandidateRecord::new(*index, img, mask, c, c.meets(rules.lr_min_clearance))
            })
            .collect();

        let record = match admission {
            Admission::Admitted { selected_hr, .. } => {
                let kept: Vec<(Clearance, u32)> = lr_records
                    .iter()
                    .filter(|r| r.kept)
                    .map(|r| (r.clearance(), r.index))
                    .collect();
                let inputs = clearest_indices(&kept, input_count)?
                    .into_iter()
                    .map(|i| kept[i].1)
                    .collect();
                MemberRecord {
                    key,
                    band: tile.band,
                    tile_id: tile.tile_id.clone(),
                    dir,
                    status: MemberStatus::Admitted,
                    rejection: Vec::new(),
                    hr: hr_records,
                    selected_hr: Some(selected_hr),
                    lr: lr_records,
                    inputs,
                    split: None,
                }
            }
            Admission::Rejected(rejection) => MemberRecord {
                key,
                band: tile.band,
                tile_id: tile.tile_id.clone(),
                dir,
                status: MemberStatus::Rejected,
                rejection: rejection.rules,
                hr: hr_records,
                selected_hr: None,
                lr: lr_records,
                inputs: Vec::new(),
                split: None,
            },
        };
        members.push(record);
    }
    Ok(Manifest {
        version: MANIFEST_VERSION,
        root: root.to_path_buf(),
        provenance,
        rules: RulesRecord::new(rules, input_count),
        members,
        split: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbered_names() {
        assert_eq!(numbered("LR000.png", "LR"), Some(Some(0)));
        assert_eq!(numbered("LR12.png", "LR"), Some(Some(12)));
        assert_eq!(numbered("HR.png", "HR"), Some(None));
        assert_eq!(numbered("LRx.png", "LR"), None);
        assert_eq!(numbered("QM001.png", "LR"), None);
        assert_eq!(numbered("LR001.tif", "LR"), None);
    }
}
