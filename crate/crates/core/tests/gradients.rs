use misr_core::neuralnet::gradcheck::check_all;
use misr_core::neuralnet::ops::{conv2d_forward, deconv2d_forward};
use misr_core::neuralnet::{Architecture, NetworkParams, Tensor};
use misr_core::seed::rng;
use rand::Rng;

#[test]
fn every_layer_passes_in_f64() {
    for seed in [11, 12] {
        for c in check_all::<f64>(seed).unwrap() {
            assert!(c.checked > 0);
            assert!(
                c.max_rel_error < 1e-6,
                "{} (seed {seed}): {:e}",
                c.name,
                c.max_rel_error
            );
        }
    }
}

#[test]
fn f32_kernels_match_the_f64_reference() {
    for c in check_all::<f32>(21).unwrap() {
        assert!(c.max_rel_error < 1e-4, "{}: {:e}", c.name, c.max_rel_error);
    }
}

/// Strided cross-correlation written out directly: the adjoint of the
/// transposed convolution.
#[allow(clippy::too_many_arguments)]
fn strided_conv(
    y: &[f64],
    cout: usize,
    oh: usize,
    ow: usize,
    w: &[f64],
    cin: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    wd: usize,
) -> Vec<f64> {
    let mut x = vec![0.0; cin * h * wd];
    for ci in 0..cin {
        for iy in 0..h {
            for ix in 0..wd {
                let mut acc = 0.0;
                for co in 0..cout {
                    for ky in 0..k {
                        for kx in 0..k {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            let ox = (ix * stride + kx) as isize - pad as isize;
                            if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                continue;
                            }
                            let yv = y[(co * oh + oy as usize) * ow + ox as usize];
                            acc += w[((ci * cout + co) * k + ky) * k + kx] * yv;
                        }
                    }
                }
                x[(ci * h + iy) * wd + ix] = acc;
            }
        }
    }
    x
}

#[test]
fn deconvolution_is_adjoint_to_strided_convolution() {
    let mut r = rng(4);
    let (cin, cout, k, s, p, h, w) = (3, 2, 9, 3, 3, 5, 4);
    let x: Vec<f64> = (0..cin * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
    let wt: Vec<f64> = (0..cin * cout * k * k).map(|_| r.random_range(-1.0..1.0)).collect();
    let (oh, ow) = (h * s, w * s);
    let y: Vec<f64> = (0..cout * oh * ow).map(|_| r.random_range(-1.0..1.0)).collect();

    let dx = deconv2d_forward(
        &Tensor::from_vec([1, cin, h, w], x.clone()).unwrap(),
        &Tensor::from_vec([cin, cout, k, k], wt.clone()).unwrap(),
        &vec![0.0; cout],
        s,
        p,
    )
    .unwrap();
    assert_eq!(dx.shape(), [1, cout, oh, ow]);
    let lhs: f64 = dx.as_slice().iter().zip(&y).map(|(a, b)| a * b).sum();
    let cy = strided_conv(&y, cout, oh, ow, &wt, cin, k, s, p, h, w);
    let rhs: f64 = x.iter().zip(&cy).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn stride_one_convolution_is_self_adjoint_up_to_flip() {
    // ⟨conv(x; w), y⟩ = ⟨x, conv(y; flip(wᵀ))⟩ for same padding
    let mut r = rng(8);
    let (c1, c2, k, h, w) = (2, 3, 3, 6, 5);
    let x: Vec<f64> = (0..c1 * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..c2 * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
    let wt: Vec<f64> = (0..c2 * c1 * k * k).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut flipped = vec![0.0; wt.len()];
    for o in 0..c2 {
        for i in 0..c1 {
            for ky in 0..k {
                for kx in 0..k {
                    flipped[((i * c2 + o) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        wt[((o * c1 + i) * k + ky) * k + kx];
                }
            }
        }
    }
    let fx = conv2d_forward(
        &Tensor::from_vec([1, c1, h, w], x.clone()).unwrap(),
        &Tensor::from_vec([c2, c1, k, k], wt).unwrap(),
        &[0.0; 3],
        1,
    )
    .unwrap();
    let gy = conv2d_forward(
        &Tensor::from_vec([1, c2, h, w], y.clone()).unwrap(),
        &Tensor::from_vec([c1, c2, k, k], flipped).unwrap(),
        &[0.0; 2],
        1,
    )
    .unwrap();
    let lhs: f64 = fx.as_slice().iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = gy.as_slice().iter().zip(&x).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn fixed_params_and_input_give_bit_stable_output() {
    let p = NetworkParams::<f32>::init(Architecture::MISR, 17);
    let x = Tensor::from_fn([1, 5, 128, 128], |i| ((i * 2654435761) % 1000) as f32 / 1000.0);
    let a = misr_core::neuralnet::forward(&p, &x).unwrap();
    let b = misr_core::neuralnet::forward(&p.clone(), &x).unwrap();
    assert_eq!(a.shape(), [1, 1, 384, 384]);
    let bits = |t: &Tensor<f32>| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert!(a.as_slice().iter().any(|&v| v > 0.0));
}
