//! Central finite-difference checks for every differentiable operation.
//!
//! Each check draws seeded inputs, computes the analytic gradient of a
//! random projection `Σ r·f(x)` with the kernels instantiated at `T`, and
//! compares it against central differences of the same projection computed
//! in `f64`. Running with `T = f32` therefore measures the error of the
//! training-precision kernels against a 64-bit reference.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::network::{backward_sample, forward_sample, Architecture, NetworkParams, Workspace};
use super::ops::{
    channel_mean_backward, channel_mean_forward, conv2d_backward, conv2d_forward,
    deconv2d_backward, deconv2d_forward, masked_mse, relu_backward, relu_forward, ConvShape,
    DeconvShape,
};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NnError;
use crate::seed::rng;

/// Perturbation used for the central differences.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    /// Number of gradient components compared.
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Largest componentwise `|a - n| / max(|a|, |n|, floor)` where the floor
/// is `1e-3 · max|a|` so that components which are zero up to rounding do
/// not dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn uniform(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m: f64 = r.random_range(0.05..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn tensor<T: Scalar>(shape: [usize; 4], v: &[f64]) -> Tensor<T> {
    Tensor::from_vec(shape, v.iter().map(|&x| T::from_f64(x)).collect()).expect("shape")
}

fn lift<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

fn lower<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn project(r: &[f64], y: &[f64]) -> f64 {
    r.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn finish(name: &'static str, parts: &[(Vec<f64>, Vec<f64>)]) -> GradCheck {
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (a, n) in parts {
        checked += a.len();
        worst = worst.max(max_relative_error(a, n));
    }
    GradCheck {
        name,
        checked,
        max_rel_error: worst,
    }
}

/// Gradient of a convolution with respect to input, kernel and bias on a
/// `2 × cin × 5 × 5` batch.
pub fn check_conv<T: Scalar>(shape: ConvShape, seed: u64) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let mut r = rng(seed);
    let xs = [2, shape.cin, 5, 5];
    let ws = shape.weight_shape();
    let x = uniform(&mut r, xs.iter().product());
    let w = uniform(&mut r, ws.iter().product());
    let b = uniform(&mut r, shape.cout);
    let ys = [2, shape.cout, 5, 5];
    let proj = uniform(&mut r, ys.iter().product());

    let g = conv2d_backward(
        &tensor::<T>(xs, &x),
        &tensor::<T>(ws, &w),
        &lift::<T>(&b),
        shape.pad,
        &tensor::<T>(ys, &proj),
        true,
    )?;
    let mut analytic = lower(g.dx.expect("requested").as_slice());
    analytic.extend(lower(g.dw.as_slice()));
    analytic.extend(lower(&g.db));

    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        let y = conv2d_forward(&tensor::<f64>(xs, x), &tensor::<f64>(ws, w), b, shape.pad)
            .expect("shapes checked above");
        project(&proj, y.as_slice())
    };
    let mut numeric = numeric_gradient(&x, STEP, |x| loss(x, &w, &b));
    numeric.extend(numeric_gradient(&w, STEP, |w| loss(&x, w, &b)));
    numeric.extend(numeric_gradient(&b, STEP, |b| loss(&x, &w, b)));
    Ok((analytic, numeric))
}

/// Gradient of a transposed convolution on a `2 × cin × 4 × 4` batch.
pub fn check_deconv<T: Scalar>(
    shape: DeconvShape,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let mut r = rng(seed);
    let xs = [2, shape.cin, 4, 4];
    let ws = shape.weight_shape();
    let (oh, ow) = shape.out_size(4, 4)?;
    let ys = [2, shape.cout, oh, ow];
    let x = uniform(&mut r, xs.iter().product());
    let w = uniform(&mut r, ws.iter().product());
    let b = uniform(&mut r, shape.cout);
    let proj = uniform(&mut r, ys.iter().product());
    let (s, p) = (shape.stride, shape.pad);

    let g = deconv2d_backward(
        &tensor::<T>(xs, &x),
        &tensor::<T>(ws, &w),
        &lift::<T>(&b),
        s,
        p,
        &tensor::<T>(ys, &proj),
        true,
    )?;
    let mut analytic = lower(g.dx.expect("requested").as_slice());
    analytic.extend(lower(g.dw.as_slice()));
    analytic.extend(lower(&g.db));

    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        let y = deconv2d_forward(&tensor::<f64>(xs, x), &tensor::<f64>(ws, w), b, s, p)
            .expect("shapes checked above");
        project(&proj, y.as_slice())
    };
    let mut numeric = numeric_gradient(&x, STEP, |x| loss(x, &w, &b));
    numeric.extend(numeric_gradient(&w, STEP, |w| loss(&x, w, &b)));
    numeric.extend(numeric_gradient(&b, STEP, |b| loss(&x, &w, b)));
    Ok((analytic, numeric))
}

pub fn check_relu<T: Scalar>(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let shape = [2, 3, 4, 4];
    let n = shape.iter().product();
    let x = away_from_zero(&mut r, n);
    let proj = uniform(&mut r, n);
    let y = relu_forward(&tensor::<T>(shape, &x));
    let analytic = lower(relu_backward(&y, &tensor::<T>(shape, &proj)).as_slice());
    let numeric = numeric_gradient(&x, STEP, |x| {
        project(&proj, relu_forward(&tensor::<f64>(shape, x)).as_slice())
    });
    (analytic, numeric)
}

pub fn check_channel_mean<T: Scalar>(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let shape = [2, 16, 3, 3];
    let x = uniform(&mut r, shape.iter().product());
    let proj = uniform(&mut r, 2 * 9);
    let analytic = lower(channel_mean_backward(&tensor::<T>([2, 1, 3, 3], &proj), 16).as_slice());
    let numeric = numeric_gradient(&x, STEP, |x| {
        project(&proj, channel_mean_forward(&tensor::<f64>(shape, x)).as_slice())
    });
    (analytic, numeric)
}

/// Masked MSE with roughly a third of the pixels concealed.
pub fn check_masked_loss<T: Scalar>(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = 64;
    let pred = uniform(&mut r, n);
    let target = uniform(&mut r, n);
    let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.65)).collect();
    mask[0] = true;
    let (_, grad) = masked_mse(&lift::<T>(&pred), &lift::<T>(&target), Some(&mask))
        .expect("at least one clear pixel");
    let numeric = numeric_gradient(&pred, STEP, |p| {
        masked_mse(p, &target, Some(&mask)).expect("clear pixels").0
    });
    (lower(&grad), numeric)
}

/// A narrow version of the full network, small enough to perturb every
/// parameter.
pub fn small_architecture() -> Architecture {
    let mut a = Architecture::MISR;
    a.conv[0].cout = 4;
    a.conv[1].cin = 4;
    a.conv[1].cout = 3;
    a.conv[2].cin = 3;
    a.conv[2].cout = 3;
    a.deconv.cin = 3;
    a.deconv.cout = 4;
    a
}

/// End-to-end gradient of the masked loss through the whole network with
/// respect to every parameter.
pub fn check_network<T: Scalar>(seed: u64) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let arch = small_architecture();
    let (h, w) = (6, 6);
    let (oh, ow) = arch.validate(h, w)?;
    let mut r = rng(seed);
    let base = NetworkParams::<f64>::init(arch, seed);
    // positive biases keep most units active so the check is not trivially zero
    let mut base = base;
    for layer in base.conv.iter_mut().chain(std::iter::once(&mut base.deconv)) {
        for b in &mut layer.bias {
            *b = r.random_range(0.05..0.3);
        }
    }
    let input: Vec<f64> = (0..arch.inputs() * h * w).map(|_| r.random_range(0.0..1.0)).collect();
    let target: Vec<f64> = (0..oh * ow).map(|_| r.random_range(0.0..1.0)).collect();
    let mask: Vec<bool> = (0..oh * ow).map(|_| r.random_bool(0.8)).collect();

    let typed: NetworkParams<T> = base.cast();
    let mut ws = Workspace::new();
    forward_sample(&typed, &lift::<T>(&input), h, w, &mut ws)?;
    let (_, d_out) =
        masked_mse(ws.output(), &lift::<T>(&target), Some(&mask)).expect("clear pixels");
    let mut grads = NetworkParams::<T>::zeros(arch);
    backward_sample(&typed, &d_out, &mut ws, &mut grads)?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| lower(t.2)).collect();

    let flat: Vec<f64> = base.tensors().iter().flat_map(|t| t.2.to_vec()).collect();
    let mut probe = base.clone();
    let mut ws64 = Workspace::new();
    let numeric = numeric_gradient(&flat, STEP, |values| {
        let mut offset = 0;
        for buf in probe.tensors_mut() {
            buf.copy_from_slice(&values[offset..offset + buf.len()]);
            offset += buf.len();
        }
        forward_sample(&probe, &input, h, w, &mut ws64).expect("shapes checked above");
        masked_mse(ws64.output(), &target, Some(&mask)).expect("clear pixels").0
    });
    Ok((analytic, numeric))
}

/// Runs every check at precision `T`.
pub fn check_all<T: Scalar>(seed: u64) -> Result<Vec<GradCheck>, NnError> {
    let arch = Architecture::MISR;
    let mut small_deconv = arch.deconv;
    small_deconv.cin = 2;
    small_deconv.cout = 3;
    // not decomposable into a pixel shuffle
    let scatter_deconv = DeconvShape {
        cin: 2,
        cout: 3,
        k: 4,
        stride: 2,
        pad: 1,
    };
    let narrow = |c: ConvShape, cin: usize, cout: usize| ConvShape { cin, cout, ..c };
    Ok(vec![
        finish("conv1", &[check_conv::<T>(narrow(arch.conv[0], 5, 4), seed)?]),
        finish("conv2", &[check_conv::<T>(narrow(arch.conv[1], 4, 3), seed + 1)?]),
        finish("conv3", &[check_conv::<T>(narrow(arch.conv[2], 3, 2), seed + 2)?]),
        finish("deconv", &[check_deconv::<T>(small_deconv, seed + 3)?]),
        finish(
            "deconv (general stride)",
            &[check_deconv::<T>(scatter_deconv, seed + 8)?],
        ),
        finish("relu", &[check_relu::<T>(seed + 4)]),
        finish("channel mean", &[check_channel_mean::<T>(seed + 5)]),
        finish("masked loss", &[check_masked_loss::<T>(seed + 6)]),
        finish("network", &[check_network::<T>(seed + 7)?]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(max_relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
        // a tiny component next to a large one is judged against the floor
        let e = max_relative_error(&[1.0, 1e-12], &[1.0, 2e-12]);
        assert!(e < 1e-8);
    }

    #[test]
    fn numeric_gradient_of_a_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], STEP, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn checks_detect_a_wrong_gradient() {
        let (mut a, n) = check_relu::<f64>(1);
        let i = a.iter().position(|v| *v != 0.0).unwrap();
        a[i] *= 1.01;
        assert!(max_relative_error(&a, &n) > 1e-3);
    }
}
