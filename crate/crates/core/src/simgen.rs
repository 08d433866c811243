//! Seeded acquisition simulator.
//!
//! A procedural HR scene is observed through a fixed pipeline: optional
//! smooth drift, sub-pixel translation in HR space, 3×3 block-mean
//! downscale, additive brightness bias, Gaussian noise, clamping and cloud
//! blobs painted over the concealed pixels. Every output is a pure function
//! of its seed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Dataset, Provenance};
use crate::member::{AdmissionRules, Band, DataMember, LrFrame, MemberError};
use crate::raster::{Image, Plane, QualityMask};
use crate::resample::blockmean_downscale_plane;
use crate::seed::{derive, rng, Stream};
use crate::{HR_SIZE, SCALE};

/// Largest simulated shift, matching the metric's registration window.
pub const MAX_SHIFT: f64 = 3.0;
/// Intensity painted under clouds.
pub const CLOUD_LEVEL: f64 = 0.9;
const MAX_RETRIES: u64 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error("could not generate a valid member after {retries} attempts: {last}")]
    Exhausted { retries: u64, last: MemberError },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    /// `(dx, dy)` in HR pixels; the acquired content at `p` is the scene at `p + shift`.
    pub shift: (f64, f64),
    pub brightness_bias: f64,
    pub noise_sigma: f64,
    pub cloud_fraction: f64,
    pub drift_amplitude: f64,
}

impl AcquisitionParams {
    pub const IDENTITY: AcquisitionParams = AcquisitionParams {
        shift: (0.0, 0.0),
        brightness_bias: 0.0,
        noise_sigma: 0.0,
        cloud_fraction: 0.0,
        drift_amplitude: 0.0,
    };

    pub fn validate(&self) -> Result<(), SimError> {
        let (dx, dy) = self.shift;
        if !(dx.abs() <= MAX_SHIFT && dy.abs() <= MAX_SHIFT) {
            return Err(SimError::Config(format!(
                "shift ({dx}, {dy}) exceeds ±{MAX_SHIFT} px"
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SimError::Config(format!("noise sigma {}", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return Err(SimError::Config(format!(
                "cloud fraction {}",
                self.cloud_fraction
            )));
        }
        if !(self.drift_amplitude >= 0.0) {
            return Err(SimError::Config(format!(
                "drift amplitude {}",
                self.drift_amplitude
            )));
        }
        if !self.brightness_bias.is_finite() {
            return Err(SimError::Config("non-finite bias".into()));
        }
        Ok(())
    }
}

/// Ranges from which per-acquisition parameters are drawn uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsDistribution {
    /// Shifts are drawn from `[-max_shift, max_shift]` on each axis.
    pub max_shift: f64,
    /// Round shifts to whole HR pixels.
    pub integer_shifts: bool,
    pub bias: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub cloud_fraction: (f64, f64),
    pub drift_amplitude: (f64, f64),
    /// Cloud fraction of the HR target.
    pub hr_cloud_fraction: (f64, f64),
}

impl Default for ParamsDistribution {
    fn default() -> Self {
        Self {
            max_shift: 2.0,
            integer_shifts: false,
            bias: (-0.05, 0.05),
            noise_sigma: (0.002, 0.01),
            cloud_fraction: (0.0, 0.3),
            drift_amplitude: (0.0, 0.01),
            hr_cloud_fraction: (0.0, 0.15),
        }
    }
}

impl ParamsDistribution {
    pub fn identity() -> Self {
        Self {
            max_shift: 0.0,
            integer_shifts: false,
            bias: (0.0, 0.0),
            noise_sigma: (0.0, 0.0),
            cloud_fraction: (0.0, 0.0),
            drift_amplitude: (0.0, 0.0),
            hr_cloud_fraction: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=MAX_SHIFT).contains(&self.max_shift) {
            return Err(SimError::Config(format!("max_shift {}", self.max_shift)));
        }
        let ranges = [
            ("bias", self.bias, f64::NEG_INFINITY, f64::INFINITY),
            ("noise_sigma", self.noise_sigma, 0.0, f64::INFINITY),
            ("cloud_fraction", self.cloud_fraction, 0.0, 1.0),
            ("drift_amplitude", self.drift_amplitude, 0.0, f64::INFINITY),
            ("hr_cloud_fraction", self.hr_cloud_fraction, 0.0, 1.0),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo <= hi && lo >= min && hi <= max) {
                return Err(SimError::Config(format!("{name} range ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng) -> AcquisitionParams {
        let mut shift = || {
            let s = uniform(rng, -self.max_shift, self.max_shift);
            if self.integer_shifts {
                s.round()
            } else {
                s
            }
        };
        let shift = (shift(), shift());
        AcquisitionParams {
            shift,
            brightness_bias: uniform(rng, self.bias.0, self.bias.1),
            noise_sigma: uniform(rng, self.noise_sigma.0, self.noise_sigma.1),
            cloud_fraction: uniform(rng, self.cloud_fraction.0, self.cloud_fraction.1),
            drift_amplitude: uniform(rng, self.drift_amplitude.0, self.drift_amplitude.1),
        }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    // Always consume one draw so the stream layout is independent of the ranges.
    let t: f64 = rng.random();
    lo + (hi - lo) * t
}

/// Value noise with smoothstep interpolation on a `cell`-pixel lattice,
/// values in `[-1, 1]`.
pub fn value_noise(seed: u64, width: usize, height: usize, cell: usize) -> Plane {
    let mut r = rng(seed);
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| r.random_range(-1.0..=1.0)).collect();
    // random phase so lattice points do not align across octaves
    let ox: f64 = r.random();
    let oy: f64 = r.random();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    Plane::from_fn(width, height, |x, y| {
        let fx = x as f64 / cell as f64 + ox;
        let fy = y as f64 / cell as f64 + oy;
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (smooth(fx.fract()), smooth(fy.fract()));
        let at = |i: usize, j: usize| lattice[j * gw + i];
        let top = at(ix, iy) + tx * (at(ix + 1, iy) - at(ix, iy));
        let bottom = at(ix, iy + 1) + tx * (at(ix + 1, iy + 1) - at(ix, iy + 1));
        top + ty * (bottom - top)
    })
}

/// Procedural landscape normalized into `[0.05, 0.95]`: smooth noise
/// octaves plus field boundaries (step edges) and river curves.
pub fn gen_hr_scene(seed: u64, size: usize) -> Result<Image, SimError> {
    if size == 0 || size % SCALE != 0 {
        return Err(SimError::Config(format!(
            "scene size {size} is not a positive multiple of {SCALE}"
        )));
    }
    let s = size as f64;
    let mut field = Plane::filled(size, size, 0.0);
    let octaves = [(96.0, 1.0), (48.0, 0.5), (24.0, 0.25), (12.0, 0.125), (6.0, 0.06)];
    for (k, &(cell_at_384, amp)) in octaves.iter().enumerate() {
        let cell = ((cell_at_384 * s / 384.0).round() as usize).max(2);
        let noise = value_noise(derive(seed, Stream::Scene, k as u64), size, size, cell);
        for (f, n) in field.as_mut_slice().iter_mut().zip(noise.as_slice()) {
            *f += amp * n;
        }
    }

    let mut r = rng(derive(seed, Stream::Scene, 100));
    // field boundaries: half-planes with a brightness step
    for _ in 0..r.random_range(2..=4) {
        let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let (nx, ny) = (angle.cos(), angle.sin());
        let c = r.random_range(0.2..0.8) * s;
        let step = r.random_range(-0.5..0.5);
        let cx = s / 2.0;
        for y in 0..size {
            for x in 0..size {
                let d = (x as f64 - cx) * nx + (y as f64 - cx) * ny + cx - c;
                if d > 0.0 {
                    let v = field.get(x, y) + step;
                    field.set(x, y, v);
                }
            }
        }
    }
    // rivers: dark sinuous bands
    for _ in 0..r.random_range(1..=2) {
        let horizontal = r.random_bool(0.5);
        let base = r.random_range(0.15..0.85) * s;
        let amp = r.random_range(0.03..0.12) * s;
        let period = r.random_range(0.4..1.2) * s;
        let phase = r.random_range(0.0..std::f64::consts::TAU);
        let half_width = r.random_range(1.5..5.0) * s / 384.0;
        let depth = r.random_range(0.6..1.2);
        for y in 0..size {
            for x in 0..size {
                let (along, across) = if horizontal {
                    (x as f64, y as f64)
                } else {
                    (y as f64, x as f64)
                };
                let centre = base + amp * (std::f64::consts::TAU * along / period + phase).sin();
                if (across - centre).abs() <= half_width {
                    let v = field.get(x, y) - depth;
                    field.set(x, y, v);
                }
            }
        }
    }

    let (lo, hi) = field
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scene = field.map(|v| 0.05 + 0.9 * (v - lo) / span);
    Ok(scene.map(|v| v.clamp(0.05, 0.95)).into_image().expect("normalized"))
}

/// Samples `src` at `p + shift` with bilinear weights and replicated edges.
pub fn translate(src: &Plane, shift: (f64, f64)) -> Plane {
    let (w, h) = src.dims();
    let (dx, dy) = shift;
    let sample_axis = |p: usize, d: f64, n: usize| -> (usize, usize, f64) {
        let pos = (p as f64 + d).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    Plane::from_fn(w, h, |x, y| {
        let (x0, x1, tx) = sample_axis(x, dx, w);
        let (y0, y1, ty) = sample_axis(y, dy, h);
        let top = src.get(x0, y0) + tx * (src.get(x1, y0) - src.get(x0, y0));
        let bottom = src.get(x0, y1) + tx * (src.get(x1, y1) - src.get(x0, y1));
        top + ty * (bottom - top)
    })
}

/// Smooth blobs covering about `fraction` of the pixels (`false` = concealed).
pub fn cloud_mask(seed: u64, width: usize, height: usize, fraction: f64) -> QualityMask {
    let n = width * height;
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return QualityMask::all_clear(width, height);
    }
    let cell = (width.min(height) / 4).max(2);
    let a = value_noise(seed, width, height, cell);
    let b = value_noise(splitmix(seed), width, height, (cell / 2).max(2));
    let field: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(a, b)| a + 0.5 * b)
        .collect();
    let mut sorted = field.clone();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let cut = sorted[k.min(n) - 1];
    let clear = field.iter().map(|&v| v < cut).collect();
    QualityMask::new(width, height, clear).expect("mask dimensions")
}

fn splitmix(seed: u64) -> u64 {
    crate::seed::splitmix64(seed)
}

/// Paints concealed pixels with bright values around [`CLOUD_LEVEL`].
pub fn paint_clouds(img: &mut Plane, mask: &QualityMask, seed: u64) {
    let texture = value_noise(seed, img.width(), img.height(), 8);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !mask.is_clear(x, y) {
                img.set(x, y, CLOUD_LEVEL + 0.03 * texture.get(x, y));
            }
        }
    }
}

/// Simulates one LR acquisition of `hr`.
pub fn acquire_lr(
    hr: &Image,
    p: &AcquisitionParams,
    seed: u64,
) -> Result<(Image, QualityMask), SimError> {
    p.validate()?;
    let (w, h) = hr.dims();
    if w % SCALE != 0 || h % SCALE != 0 {
        return Err(SimError::Config(format!("HR size {w}x{h} not divisible by 3")));
    }

    let mut scene = hr.plane().clone();
    if p.drift_amplitude > 0.0 {
        let drift = value_noise(derive(seed, Stream::Drift, 0), w, h, 48);
        for (s, d) in scene.as_mut_slice().iter_mut().zip(drift.as_slice()) {
            *s += p.drift_amplitude * d;
        }
    }
    let moved = if p.shift == (0.0, 0.0) {
        scene
    } else {
        translate(&scene, p.shift)
    };
    let mut lr = blockmean_downscale_plane(&moved).expect("divisible by 3");
    if p.brightness_bias != 0.0 {
        lr.as_mut_slice().iter_mut().for_each(|v| *v += p.brightness_bias);
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma)
            .map_err(|e| SimError::Config(format!("noise: {e}")))?;
        let mut r = rng(derive(seed, Stream::Noise, 0));
        lr.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut r));
    }
    lr.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let (lw, lh) = lr.dims();
    let mask = cloud_mask(derive(seed, Stream::Clouds, 0), lw, lh, p.cloud_fraction);
    paint_clouds(&mut lr, &mask, derive(seed, Stream::Clouds, 1));
    let image = lr.clamp_to_image();
    Ok((image, mask))
}

/// Member generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Inclusive range of LR acquisitions per member.
    pub n_lr: (usize, usize),
    pub params: ParamsDistribution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_lr: (9, 14),
            params: ParamsDistribution::default(),
        }
    }
}

/// Generates a member for `band` of the tile seeded by `tile_seed`.
pub fn gen_member_for(
    tile_seed: u64,
    band: Band,
    tile_id: &str,
    n_lr: usize,
    dist: &ParamsDistribution,
    rules: &AdmissionRules,
) -> Result<DataMember, SimError> {
    dist.validate()?;
    if n_lr < rules.min_lr_count {
        return Err(SimError::Config(format!(
            "n_lr {n_lr} is below the minimum of {}",
            rules.min_lr_count
        )));
    }
    let band_seed = derive(tile_seed, Stream::Member, band as u64);
    let hr = gen_hr_scene(derive(band_seed, Stream::Scene, 0), HR_SIZE)?;
    let mut last = None;
    for attempt in 0..MAX_RETRIES {
        let seed = derive(band_seed, Stream::Retry, attempt);
        let mut params_rng = rng(derive(seed, Stream::Params, 0));

        let hr_cloud = uniform(
            &mut params_rng,
            dist.hr_cloud_fraction.0,
            dist.hr_cloud_fraction.1,
        );
        let hr_mask = cloud_mask(derive(seed, Stream::HrClouds, 0), HR_SIZE, HR_SIZE, hr_cloud);
        let mut hr_plane = hr.plane().clone();
        paint_clouds(&mut hr_plane, &hr_mask, derive(seed, Stream::HrClouds, 1));
        let hr_img = hr_plane.clamp_to_image();

        let mut lrs = Vec::with_capacity(n_lr);
        for i in 0..n_lr {
            let p = dist.draw(&mut params_rng);
            let (image, mask) = acquire_lr(&hr, &p, derive(seed, Stream::Acquisition, i as u64))?;
            lrs.push(LrFrame {
                image,
                mask,
                index: i as u32,
            });
        }
        match DataMember::new(band, tile_id, hr_img, hr_mask, lrs, rules) {
            Ok(member) => return Ok(member),
            Err(e) => last = Some(e),
        }
    }
    Err(SimError::Exhausted {
        retries: MAX_RETRIES,
        last: last.expect("at least one attempt"),
    })
}

/// Generates a single RED member with tile id `sim-<seed>`.
pub fn gen_member(seed: u64, n_lr: usize, dist: &ParamsDistribution) -> Result<DataMember, SimError> {
    gen_member_for(
        seed,
        Band::Red,
        &format!("sim-{seed}"),
        n_lr,
        dist,
        &AdmissionRules::default(),
    )
}

/// `n_members` members over `ceil(n/2)` tiles, each tile emitting a RED and
/// (except possibly the last) a NIR member.
pub fn gen_dataset(seed: u64, n_members: usize, cfg: &SimConfig) -> Result<Dataset, SimError> {
    if n_members == 0 {
        return Err(SimError::Config("member count must be positive".into()));
    }
    let (lo, hi) = cfg.n_lr;
    if lo > hi {
        return Err(SimError::Config(format!("n_lr range ({lo}, {hi})")));
    }
    let rules = AdmissionRules::default();
    let tiles = n_members.div_ceil(2);
    let mut members = Vec::with_capacity(n_members);
    for t in 0..tiles {
        let tile_seed = derive(seed, Stream::Member, t as u64);
        let tile_id = format!("imgset{t:04}");
        for band in Band::ALL {
            if members.len() == n_members {
                break;
            }
            let mut r = rng(derive(tile_seed, Stream::Params, band as u64));
            let n_lr = r.random_range(lo..=hi);
            members.push(gen_member_for(tile_seed, band, &tile_id, n_lr, &cfg.params, &rules)?);
        }
    }
    Ok(Dataset {
        members,
        provenance: Provenance::Synthetic { seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::LR_SIZE;
    use crate::metric::cpsnr;
    use crate::resample::{bicubic_upscale_x3, blockmean_downscale_x3};

    #[test]
    fn scene_is_deterministic_and_normalized() {
        let a = gen_hr_scene(11, 96).unwrap();
        let b = gen_hr_scene(11, 96).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = a
            .as_slice()
            .iter()
            .fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(lo >= 0.05 && hi <= 0.95);
        assert!(hi - lo > 0.5);
    }

    #[test]
    fn distinct_seeds_give_distinct_scenes() {
        let a = gen_hr_scene(1, HR_SIZE).unwrap();
        let b = gen_hr_scene(2, HR_SIZE).unwrap();
        let mad = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.as_slice().len() as f64;
        assert!(mad > 0.01, "{mad}");
    }

    #[test]
    fn scene_size_must_be_divisible() {
        assert!(matches!(gen_hr_scene(1, 100), Err(SimError::Config(_))));
    }

    #[test]
    fn identity_acquisition_is_the_block_mean() {
        let hr = gen_hr_scene(3, HR_SIZE).unwrap();
        let (lr, mask) = acquire_lr(&hr, &AcquisitionParams::IDENTITY, 9).unwrap();
        assert_eq!(lr, blockmean_downscale_x3(&hr).unwrap());
        assert_eq!(mask.clear_count(), LR_SIZE * LR_SIZE);
    }

    #[test]
    fn bias_only_acquisition_adds_the_bias() {
        let hr = gen_hr_scene(3, HR_SIZE).unwrap();
        let p = AcquisitionParams {
            brightness_bias: 0.1,
            ..AcquisitionParams::IDENTITY
        };
        let (lr, _) = acquire_lr(&hr, &p, 9).unwrap();
        let down = blockmean_downscale_x3(&hr).unwrap();
        for (a, b) in lr.as_slice().iter().zip(down.as_slice()) {
            if b + 0.1 <= 1.0 {
                assert_eq!(*a, b + 0.1);
            }
        }
    }

    #[test]
    fn cloud_fraction_controls_clearance() {
        let hr = gen_hr_scene(5, HR_SIZE).unwrap();
        let p = AcquisitionParams {
            cloud_fraction: 0.3,
            ..AcquisitionParams::IDENTITY
        };
        for seed in 0..5 {
            let (lr, mask) = acquire_lr(&hr, &p, seed).unwrap();
            let c = mask.clearance().fraction();
            assert!((0.65..=0.75).contains(&c), "{c}");
            for (x, y) in (0..LR_SIZE).flat_map(|y| (0..LR_SIZE).map(move |x| (x, y))) {
                if !mask.is_clear(x, y) {
                    assert!((lr.get(x, y) - CLOUD_LEVEL).abs() <= 0.03 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn acquisition_parameters_are_validated() {
        let hr = gen_hr_scene(5, 48).unwrap();
        let bad = AcquisitionParams {
            shift: (3.5, 0.0),
            ..AcquisitionParams::IDENTITY
        };
        assert!(acquire_lr(&hr, &bad, 0).is_err());
        let bad = AcquisitionParams {
            noise_sigma: -0.1,
            ..AcquisitionParams::IDENTITY
        };
        assert!(acquire_lr(&hr, &bad, 0).is_err());
    }

    #[test]
    fn integer_translation_moves_content() {
        let src = Plane::from_fn(10, 8, |x, y| (x + 10 * y) as f64);
        let moved = translate(&src, (2.0, -1.0));
        assert_eq!(moved.get(3, 4), src.get(5, 3));
        // replicated edge
        assert_eq!(moved.get(9, 0), src.get(9, 0));
        let half = translate(&src, (0.5, 0.0));
        assert_eq!(half.get(3, 3), 0.5 * (src.get(3, 3) + src.get(4, 3)));
    }

    #[test]
    fn planted_integer_shift_is_recovered_through_the_lr_path() {
        let mut hits = 0;
        for case in 0..20u64 {
            let hr = gen_hr_scene(1000 + case, HR_SIZE).unwrap();
            let du = (case % 7) as i64 - 3;
            let dv = ((case * 3 + 1) % 7) as i64 - 3;
            let p = AcquisitionParams {
                shift: (du as f64, dv as f64),
                ..AcquisitionParams::IDENTITY
            };
            let (lr, _) = acquire_lr(&hr, &p, case).unwrap();
            let sr = bicubic_upscale_x3(&lr).unwrap();
            let s = cpsnr(&hr, &QualityMask::all_clear(HR_SIZE, HR_SIZE), &sr).unwrap();
            let want = ((3 + du) as usize, (3 + dv) as usize);
            if s.best_offset == want {
                hits += 1;
            } else {
                let (u, v) = s.best_offset;
                assert!(u.abs_diff(want.0) <= 1 && v.abs_diff(want.1) <= 1);
            }
        }
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn bias_only_acquisition_scores_like_identity() {
        let hr = gen_hr_scene(21, HR_SIZE).unwrap();
        let mask = QualityMask::all_clear(HR_SIZE, HR_SIZE);
        let (plain, _) = acquire_lr(&hr, &AcquisitionParams::IDENTITY, 1).unwrap();
        let p = AcquisitionParams {
            brightness_bias: -0.04,
            ..AcquisitionParams::IDENTITY
        };
        let (biased, _) = acquire_lr(&hr, &p, 1).unwrap();
        // upscale without clamping: the scene lies in [0.05, 0.95]
        let a = cpsnr(&hr, &mask, &crate::resample::cubic_upscale_x3(&plain)).unwrap();
        let b = cpsnr(&hr, &mask, &crate::resample::cubic_upscale_x3(&biased)).unwrap();
        assert!((a.cpsnr - b.cpsnr).abs() < 1e-9, "{} vs {}", a.cpsnr, b.cpsnr);
    }

    #[test]
    fn member_generation() {
        let m = gen_member(7, 9, &ParamsDistribution::default()).unwrap();
        assert_eq!(m.lrs().len(), 9);
        let rules = AdmissionRules::default();
        assert!(m.hr_mask().clearance().meets(rules.hr_min_clearance));
        assert!(m
            .lrs()
            .iter()
            .all(|lr| lr.clearance().meets(rules.lr_min_clearance)));
        assert!(matches!(
            gen_member(7, 8, &ParamsDistribution::default()),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn identity_member_scores_equal_across_frames() {
        let m = gen_member(3, 9, &ParamsDistribution::identity()).unwrap();
        let scores: Vec<f64> = m
            .lrs()
            .iter()
            .map(|lr| {
                cpsnr(m.hr(), m.hr_mask(), &bicubic_upscale_x3(&lr.image).unwrap())
                    .unwrap()
                    .cpsnr
            })
            .collect();
        assert!(scores.iter().all(|s| *s == scores[0]));
        assert!(scores[0].is_finite() && scores[0] < 100.0 && scores[0] > 20.0);
    }

    #[test]
    fn dataset_pairs_bands_per_tile() {
        let cfg = SimConfig::default();
        let ds = gen_dataset(5, 5, &cfg).unwrap();
        assert_eq!(ds.members.len(), 5);
        let keys: Vec<String> = ds.members.iter().map(|m| m.key()).collect();
        assert_eq!(
            keys,
            vec![
                "RED/imgset0000",
                "NIR/imgset0000",
                "RED/imgset0001",
                "NIR/imgset0001",
                "RED/imgset0002"
            ]
        );
        assert!(gen_dataset(5, 0, &cfg).is_err());
    }
}
