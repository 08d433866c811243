//! Clear-pixel cPSNR.
//!
//! For every displacement `(u, v)` in `{0..=6}²` the HR image and its mask
//! are cropped at `(u, v)` and compared against the SR image center-cropped
//! at `(3, 3)`. The mean clear-pixel difference (brightness bias) is removed
//! before squaring, concealed HR pixels are ignored, and the best PSNR over
//! all displacements is the score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::member::DataMember;
use crate::raster::{Plane, QualityMask};
use crate::resample::{bicubic_upscale_x3, ResampleError};

/// Largest displacement in each direction, in HR pixels.
pub const BORDER: usize = 3;
/// Number of displacements per axis.
pub const WINDOW: usize = 2 * BORDER + 1;
/// MSE floor; caps PSNR at 100 dB.
pub const MSE_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no clear pixels to score")]
    EmptyClear,
    #[error("negative MSE {0}")]
    NegativeMse(f64),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub cpsnr: f64,
    /// `(u, v)` of the HR crop that scored best.
    pub best_offset: (usize, usize),
    pub bias_at_best: f64,
    pub mse_at_best: f64,
}

/// Views an `w×h` window of `hr`/`mask` at `hr_at` against the window of
/// `sr` at `sr_at`.
#[derive(Clone, Copy)]
struct Window<'a> {
    hr: &'a Plane,
    mask: &'a QualityMask,
    sr: &'a Plane,
    hr_at: (usize, usize),
    sr_at: (usize, usize),
    size: (usize, usize),
}

impl Window<'_> {
    fn rows(&self) -> impl Iterator<Item = (&[f64], &[bool], &[f64])> + '_ {
        let (w, h) = self.size;
        (0..h).map(move |y| {
            let (hu, hv) = self.hr_at;
            let (su, sv) = self.sr_at;
            (
                &self.hr.row(hv + y)[hu..hu + w],
                &self.mask.row(hv + y)[hu..hu + w],
                &self.sr.row(sv + y)[su..su + w],
            )
        })
    }

    fn bias(&self) -> Option<(f64, usize)> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (hr, mask, sr) in self.rows() {
            for i in 0..hr.len() {
                if mask[i] {
                    sum += hr[i] - sr[i];
                    count += 1;
                }
            }
        }
        (count > 0).then(|| (sum / count as f64, count))
    }

    /// `(bias, mse)`, or `None` without clear pixels.
    fn corrected_mse(&self) -> Option<(f64, f64)> {
        let (b, count) = self.bias()?;
        let mut sum = 0.0;
        for (hr, mask, sr) in self.rows() {
            for i in 0..hr.len() {
                if mask[i] {
                    let r = hr[i] - (sr[i] + b);
                    sum += r * r;
                }
            }
        }
        Some((b, sum / count as f64))
    }
}

fn same_dims(hr: &Plane, sr: &Plane, mask: &QualityMask) -> Result<()> {
    if hr.dims() != sr.dims() || hr.dims() != mask.dims() {
        return Err(MetricError::Dimensions(format!(
            "HR {:?}, SR {:?}, mask {:?}",
            hr.dims(),
            sr.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

fn whole<'a>(hr: &'a Plane, sr: &'a Plane, mask: &'a QualityMask) -> Window<'a> {
    Window {
        hr,
        mask,
        sr,
        hr_at: (0, 0),
        sr_at: (0, 0),
        size: hr.dims(),
    }
}

/// Mean of `HR - SR` over clear pixels.
pub fn bias(hr_crop: &Plane, sr_crop: &Plane, mask_crop: &QualityMask) -> Result<f64> {
    same_dims(hr_crop, sr_crop, mask_crop)?;
    whole(hr_crop, sr_crop, mask_crop)
        .bias()
        .map(|(b, _)| b)
        .ok_or(MetricError::EmptyClear)
}

/// Mean of `(HR - (SR + b))²` over clear pixels, `b` the brightness bias.
pub fn clear_mse(hr_crop: &Plane, sr_crop: &Plane, mask_crop: &QualityMask) -> Result<f64> {
    same_dims(hr_crop, sr_crop, mask_crop)?;
    whole(hr_crop, sr_crop, mask_crop)
        .corrected_mse()
        .map(|(_, mse)| mse)
        .ok_or(MetricError::EmptyClear)
}

/// `-10·log10(max(mse, 1e-10))`.
pub fn psnr(mse: f64) -> Result<f64> {
    if mse < 0.0 || mse.is_nan() {
        return Err(MetricError::NegativeMse(mse));
    }
    Ok(-10.0 * mse.max(MSE_FLOOR).log10())
}

/// cPSNR of `sr` against `hr`, maximized over the 7×7 displacement window.
///
/// Works for any square or rectangular size larger than 6 in both
/// directions; the compared crops are `(w - 6) × (h - 6)`. Offsets whose HR
/// crop has no clear pixel are skipped. Ties go to the smallest `v`, then the
/// smallest `u`.
pub fn cpsnr(hr: &Plane, hr_mask: &QualityMask, sr: &Plane) -> Result<ScoredPair> {
    same_dims(hr, sr, hr_mask)?;
    let (w, h) = hr.dims();
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Err(MetricError::Dimensions(format!(
            "{w}x{h} leaves no pixels after a {BORDER}px border"
        )));
    }
    let size = (w - 2 * BORDER, h - 2 * BORDER);
    let mut best: Option<ScoredPair> = None;
    for v in 0..WINDOW {
        for u in 0..WINDOW {
            let window = Window {
                hr,
                mask: hr_mask,
                sr,
                hr_at: (u, v),
                sr_at: (BORDER, BORDER),
                size,
            };
            let Some((b, mse)) = window.corrected_mse() else {
                continue;
            };
            let score = psnr(mse)?;
            if best.is_none_or(|s| score > s.cpsnr) {
                best = Some(ScoredPair {
                    cpsnr: score,
                    best_offset: (u, v),
                    bias_at_best: b,
                    mse_at_best: mse.max(MSE_FLOOR),
                });
            }
        }
    }
    best.ok_or(MetricError::EmptyClear)
}

/// Mean cPSNR of the bicubic upscales of every LR frame that attains the
/// member's maximum LR clearance.
pub fn baseline_score(member: &DataMember) -> Result<f64> {
    let best = member
        .lrs()
        .iter()
        .map(|lr| lr.clearance())
        .max()
        .ok_or(MetricError::EmptyClear)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for lr in member.lrs().iter().filter(|lr| lr.clearance() == best) {
        let sr = bicubic_upscale_x3(&lr.image)?;
        total += cpsnr(member.hr(), member.hr_mask(), &sr)?.cpsnr;
        count += 1;
    }
    Ok(total / count as f64)
}
