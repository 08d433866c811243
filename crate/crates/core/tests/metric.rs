use misr_core::metric::cpsnr;
use misr_core::seed::rng;
use misr_core::{Plane, QualityMask};
use proptest::prelude::*;
use rand::Rng;

/// Every offset scored independently from its definition.
fn reference_cpsnr(hr: &Plane, mask: &QualityMask, sr: &Plane) -> Option<(f64, (usize, usize))> {
    let (w, h) = hr.dims();
    let mut best: Option<(f64, (usize, usize))> = None;
    for v in 0..7 {
        for u in 0..7 {
            let mut diffs = Vec::new();
            for y in 0..h - 6 {
                for x in 0..w - 6 {
                    if mask.row(v + y)[u + x] {
                        diffs.push(hr.get(u + x, v + y) - sr.get(x + 3, y + 3));
                    }
                }
            }
            if diffs.is_empty() {
                continue;
            }
            let n = diffs.len() as f64;
            let b = diffs.iter().sum::<f64>() / n;
            let mse = diffs.iter().map(|d| (d - b) * (d - b)).sum::<f64>() / n;
            let score = -10.0 * mse.max(1e-10).log10();
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, (u, v)));
            }
        }
    }
    best
}

fn plane_from(values: &[f64], w: usize, h: usize) -> Plane {
    Plane::new(w, h, values.to_vec()).unwrap()
}

fn instance(size: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    let n = size * size;
    (
        proptest::collection::vec(0.0f64..1.0, n),
        proptest::collection::vec(-0.1f64..0.1, n),
        proptest::collection::vec(prop::bool::weighted(0.8), n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_the_reference_search((hr, noise, clear) in instance(14)) {
        let hr_p = plane_from(&hr, 14, 14);
        let sr: Vec<f64> = hr.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let sr_p = plane_from(&sr, 14, 14);
        let mask = QualityMask::new(14, 14, clear).unwrap();
        match (cpsnr(&hr_p, &mask, &sr_p), reference_cpsnr(&hr_p, &mask, &sr_p)) {
            (Ok(got), Some((score, offset))) => {
                prop_assert!((got.cpsnr - score).abs() <= 1e-12);
                prop_assert_eq!(got.best_offset, offset);
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
        }
    }

    #[test]
    fn constant_offsets_are_absorbed((hr, noise, clear) in instance(12), c in -0.5f64..0.5) {
        let hr_p = plane_from(&hr, 12, 12);
        let sr: Vec<f64> = hr.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let sr_p = plane_from(&sr, 12, 12);
        let mask = QualityMask::new(12, 12, clear).unwrap();
        if let Ok(base) = cpsnr(&hr_p, &mask, &sr_p) {
            let shifted = cpsnr(&hr_p, &mask, &sr_p.offset(c)).unwrap();
            prop_assert!((shifted.cpsnr - base.cpsnr).abs() <= 1e-9);
        }
    }

    #[test]
    fn concealed_values_are_ignored((hr, noise, clear) in instance(12), fill in -3.0f64..3.0) {
        let hr_p = plane_from(&hr, 12, 12);
        let sr: Vec<f64> = hr.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let sr_p = plane_from(&sr, 12, 12);
        let mutated: Vec<f64> = hr.iter().zip(&clear).map(|(v, c)| if *c { *v } else { fill }).collect();
        let mask = QualityMask::new(12, 12, clear).unwrap();
        if let Ok(base) = cpsnr(&hr_p, &mask, &sr_p) {
            let after = cpsnr(&plane_from(&mutated, 12, 12), &mask, &sr_p).unwrap();
            prop_assert_eq!(base.cpsnr.to_bits(), after.cpsnr.to_bits());
        }
    }

    #[test]
    fn never_exceeds_the_cap((hr, noise, clear) in instance(10)) {
        let hr_p = plane_from(&hr, 10, 10);
        let sr: Vec<f64> = hr.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let mask = QualityMask::new(10, 10, clear).unwrap();
        if let Ok(s) = cpsnr(&hr_p, &mask, &plane_from(&sr, 10, 10)) {
            prop_assert!(s.cpsnr <= 100.0);
        }
    }
}

#[test]
fn more_noise_scores_lower() {
    let mut r = rng(77);
    let hr = Plane::from_fn(40, 40, |_, _| r.random::<f64>());
    let pattern: Vec<f64> = (0..1600).map(|_| r.random::<f64>() - 0.5).collect();
    let mask = QualityMask::all_clear(40, 40);
    let mut last = f64::INFINITY;
    for sigma in [0.001, 0.01, 0.05, 0.2] {
        let sr = Plane::from_fn(40, 40, |x, y| hr.get(x, y) + sigma * pattern[y * 40 + x]);
        let score = cpsnr(&hr, &mask, &sr).unwrap().cpsnr;
        assert!(score < last, "sigma {sigma}: {score} >= {last}");
        last = score;
    }
}
