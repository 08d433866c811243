//! Fixed ×3 resampling between the 128×128 and 384×384 grids.
//!
//! Upscaling is separable Keys cubic convolution (`a = -0.5`) on a
//! pixel-center aligned grid with replicated edges. Downscaling averages
//! disjoint 3×3 blocks.

use thiserror::Error;

use crate::raster::{Image, Plane};
use crate::{HR_SIZE, LR_SIZE, SCALE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResampleError {
    #[error("expected a {expected}x{expected} input, got {width}x{height}")]
    Size {
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("dimensions {width}x{height} are not divisible by 3")]
    NotDivisible { width: usize, height: usize },
}

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps for one output phase: source offsets relative to the output's
/// parent pixel, and the kernel weight at each.
#[derive(Clone, Copy, Debug)]
struct Phase {
    offsets: [isize; 4],
    weights: [f64; 4],
}

/// Output pixel `3i + r` samples the source at `(3i + r + 0.5) / 3 - 0.5`.
fn phases() -> [Phase; SCALE] {
    std::array::from_fn(|r| {
        let pos = (r as f64 + 0.5) / SCALE as f64 - 0.5;
        let base = pos.floor();
        let frac = pos - base;
        let base = base as isize;
        Phase {
            offsets: [base - 1, base, base + 1, base + 2],
            weights: [
                keys_kernel(1.0 + frac),
                keys_kernel(frac),
                keys_kernel(1.0 - frac),
                keys_kernel(2.0 - frac),
            ],
        }
    })
}

fn upsample_line(src: &[f64], dst: &mut [f64], taps: &[Phase; SCALE]) {
    let n = src.len() as isize;
    for (i, out) in dst.chunks_exact_mut(SCALE).enumerate() {
        for (r, phase) in taps.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..4 {
                let j = (i as isize + phase.offsets[k]).clamp(0, n - 1) as usize;
                acc += phase.weights[k] * src[j];
            }
            out[r] = acc;
        }
    }
}

/// Cubic ×3 upscale of a plane of any size, without clamping.
pub fn cubic_upscale_x3(src: &Plane) -> Plane {
    let (w, h) = src.dims();
    let (ow, oh) = (w * SCALE, h * SCALE);
    let taps = phases();

    // rows first: h x ow
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        upsample_line(src.row(y), &mut horiz[y * ow..(y + 1) * ow], &taps);
    }

    let mut out = vec![0.0; oh * ow];
    let mut column = vec![0.0; h];
    let mut column_out = vec![0.0; oh];
    for x in 0..ow {
        for y in 0..h {
            column[y] = horiz[y * ow + x];
        }
        upsample_line(&column, &mut column_out, &taps);
        for y in 0..oh {
            out[y * ow + x] = column_out[y];
        }
    }
    Plane::new(ow, oh, out).expect("upscaled buffer matches its dimensions")
}

/// Cubic ×3 upscale of an LR image to the HR grid, clamped to `[0, 1]`.
pub fn bicubic_upscale_x3(lr: &Image) -> Result<Image, ResampleError> {
    if lr.dims() != (LR_SIZE, LR_SIZE) {
        return Err(ResampleError::Size {
            expected: LR_SIZE,
            width: lr.width(),
            height: lr.height(),
        });
    }
    Ok(cubic_upscale_x3(lr.plane()).clamp_to_image())
}

/// Mean of each disjoint 3×3 block. Zero padding would only matter for
/// sizes not divisible by 3, which are rejected.
pub fn blockmean_downscale_plane(src: &Plane) -> Result<Plane, ResampleError> {
    let (w, h) = src.dims();
    if w % SCALE != 0 || h % SCALE != 0 {
        return Err(ResampleError::NotDivisible {
            width: w,
            height: h,
        });
    }
    let (ow, oh) = (w / SCALE, h / SCALE);
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for dy in 0..SCALE {
            let row = src.row(oy * SCALE + dy);
            for (ox, acc) in out[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                let block = &row[ox * SCALE..ox * SCALE + SCALE];
                *acc += block[0] + block[1] + block[2];
            }
        }
    }
    let norm = (SCALE * SCALE) as f64;
    out.iter_mut().for_each(|v| *v /= norm);
    Ok(Plane::new(ow, oh, out).expect("downscaled buffer matches its dimensions"))
}

pub fn blockmean_downscale_x3(hr: &Image) -> Result<Image, ResampleError> {
    let plane = blockmean_downscale_plane(hr.plane())?;
    // Means of values in [0, 1] stay in [0, 1].
    Ok(plane.clamp_to_image())
}

/// Checks the canonical HR input size.
pub fn ensure_hr(img: &Plane) -> Result<(), ResampleError> {
    if img.dims() != (HR_SIZE, HR_SIZE) {
        return Err(ResampleError::Size {
            expected: HR_SIZE,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_partition_of_unity() {
        for phase in phases() {
            let total: f64 = phase.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
        // the middle phase lands exactly on a source pixel
        let mid = phases()[1];
        assert_eq!(mid.weights, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(mid.offsets[1], 0);
    }

    #[test]
    fn constant_is_reproduced() {
        let lr = Image::filled(LR_SIZE, LR_SIZE, 0.37).unwrap();
        let hr = bicubic_upscale_x3(&lr).unwrap();
        assert_eq!(hr.dims(), (HR_SIZE, HR_SIZE));
        assert!(hr.as_slice().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn linear_ramp_is_reproduced_in_interior() {
        let src = Plane::from_fn(16, 4, |x, _| 0.1 + 0.05 * x as f64);
        let up = cubic_upscale_x3(&src);
        // Source coordinate of output column X is (X + 0.5)/3 - 0.5. Columns
        // whose 4-tap support stays inside [0, 15] are exact.
        for y in 0..up.height() {
            for x in 6..up.width() - 6 {
                let s = (x as f64 + 0.5) / 3.0 - 0.5;
                let expected = 0.1 + 0.05 * s;
                assert!((up.get(x, y) - expected).abs() < 1e-12, "x={x}");
            }
        }
    }

    #[test]
    fn impulse_response_matches_kernel() {
        // Brute force: each output pixel is sum_j K(s - j) * src[j] along each
        // axis with clamped indices; for an interior impulse the clamping is
        // irrelevant and the response is K(sx - 8) * K(sy - 8).
        let mut src = Plane::filled(16, 16, 0.0);
        src.set(8, 8, 1.0);
        let up = cubic_upscale_x3(&src);
        for y in 0..48 {
            for x in 0..48 {
                let sx = (x as f64 + 0.5) / 3.0 - 0.5;
                let sy = (y as f64 + 0.5) / 3.0 - 0.5;
                let expected = keys_kernel(sx - 8.0) * keys_kernel(sy - 8.0);
                assert!((up.get(x, y) - expected).abs() < 1e-15, "({x},{y})");
            }
        }
        // output pixel 3*8 samples at 8 - 1/3: taps at distances 5/3, 2/3, 1/3, 4/3
        let w: Vec<f64> = [-5.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0, 4.0 / 3.0]
            .iter()
            .map(|&d| keys_kernel(d))
            .collect();
        let p = phases()[0];
        for k in 0..4 {
            assert!((p.weights[k] - w[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn upscale_rejects_wrong_size() {
        let img = Image::filled(64, 128, 0.1).unwrap();
        assert_eq!(
            bicubic_upscale_x3(&img),
            Err(ResampleError::Size {
                expected: 128,
                width: 64,
                height: 128
            })
        );
    }

    #[test]
    fn upscale_clamps_overshoot() {
        let lr = Image::new(
            LR_SIZE,
            LR_SIZE,
            (0..LR_SIZE * LR_SIZE)
                .map(|i| if (i % LR_SIZE) % 2 == 0 { 0.0 } else { 1.0 })
                .collect(),
        )
        .unwrap();
        let raw = cubic_upscale_x3(lr.plane());
        assert!(raw.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)));
        let hr = bicubic_upscale_x3(&lr).unwrap();
        assert!(hr.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn blockmean_examples() {
        let half = Image::filled(9, 6, 0.5).unwrap();
        let down = blockmean_downscale_x3(&half).unwrap();
        assert_eq!(down.dims(), (3, 2));
        assert!(down.as_slice().iter().all(|&v| v == 0.5));

        let block = Image::new(3, 3, (0..9).map(|i| i as f64 / 10.0).collect()).unwrap();
        let down = blockmean_downscale_x3(&block).unwrap();
        assert!((down.get(0, 0) - 0.4).abs() < 1e-15);

        assert_eq!(
            blockmean_downscale_plane(&Plane::filled(10, 9, 0.0)),
            Err(ResampleError::NotDivisible {
                width: 10,
                height: 9
            })
        );
    }

    #[test]
    fn down_after_up_is_identity_on_constants() {
        let lr = Image::filled(LR_SIZE, LR_SIZE, 0.25).unwrap();
        let round = blockmean_downscale_x3(&bicubic_upscale_x3(&lr).unwrap()).unwrap();
        assert_eq!(round, lr);
    }

    #[test]
    fn down_after_up_is_close_on_smooth_content() {
        let lr = Image::from_plane(Plane::from_fn(LR_SIZE, LR_SIZE, |x, y| {
            let (fx, fy) = (x as f64 / 128.0, y as f64 / 128.0);
            0.5 + 0.2 * (std::f64::consts::TAU * fx).sin() * (std::f64::consts::PI * fy).cos()
        }))
        .unwrap();
        let round = blockmean_downscale_x3(&bicubic_upscale_x3(&lr).unwrap()).unwrap();
        let worst = lr
            .as_slice()
            .iter()
            .zip(round.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "{worst}");
    }

    proptest! {
        #[test]
        fn blockmean_preserves_mean(values in proptest::collection::vec(0.0f64..1.0, 81)) {
            let img = Image::new(9, 9, values).unwrap();
            let down = blockmean_downscale_x3(&img).unwrap();
            prop_assert!((down.mean() - img.mean()).abs() < 1e-12);
        }

        #[test]
        fn resampling_is_deterministic(values in proptest::collection::vec(0.0f64..1.0, 36)) {
            let p = Plane::new(6, 6, values).unwrap();
            let a = cubic_upscale_x3(&p);
            let b = cubic_upscale_x3(&p);
            prop_assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
