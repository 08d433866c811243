//! The fusion network: three stride-1 convolutions in LR space, one ×3
//! transposed convolution into HR space, ReLU after every layer, then the
//! plain mean of the output channels.

use rand_distr::{Distribution, Normal};

use super::ops::{
    conv_backward_sample, conv_forward_sample, deconv_backward_sample, deconv_forward_sample,
    relu_backward_in_place, relu_in_place, ConvShape, DeconvShape,
};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NnError;
use crate::seed::{derive, rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub conv: [ConvShape; 3],
    pub deconv: DeconvShape,
}

impl Architecture {
    /// 5 → 128 (5×5) → 64 (3×3) → 9 (3×3) → 16 channels via a 9×9
    /// transposed convolution with stride 3 and padding 3.
    pub const MISR: Architecture = Architecture {
        conv: [
            ConvShape {
                cin: 5,
                cout: 128,
                k: 5,
                pad: 2,
            },
            ConvShape {
                cin: 128,
                cout: 64,
                k: 3,
                pad: 1,
            },
            ConvShape {
                cin: 64,
                cout: 9,
                k: 3,
                pad: 1,
            },
        ],
        deconv: DeconvShape {
            cin: 9,
            cout: 16,
            k: 9,
            stride: 3,
            pad: 3,
        },
    };

    pub fn inputs(&self) -> usize {
        self.conv[0].cin
    }

    pub fn outputs(&self) -> usize {
        self.deconv.cout
    }

    /// Checks channel chaining and that every hidden map keeps the input
    /// size while the output is exactly `stride` times larger.
    pub fn validate(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        for pair in self.conv.windows(2) {
            if pair[0].cout != pair[1].cin {
                return Err(NnError::Shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].cout, pair[1].cin
                )));
            }
        }
        if self.conv[2].cout != self.deconv.cin {
            return Err(NnError::Shape("conv3 width does not feed the deconvolution".into()));
        }
        for (i, c) in self.conv.iter().enumerate() {
            if c.out_size(h, w)? != (h, w) {
                return Err(NnError::Shape(format!("conv{} changes the spatial size", i + 1)));
            }
        }
        let out = self.deconv.out_size(h, w)?;
        let s = self.deconv.stride;
        if out != (h * s, w * s) {
            return Err(NnError::Shape(format!(
                "deconvolution maps {h}x{w} to {out:?}, expected {}x{}",
                h * s,
                w * s
            )));
        }
        Ok(out)
    }

    /// Weights plus biases over all layers.
    ///
    /// The default network has 106,793 parameters. The 119,610 figure that
    /// circulates for this design cannot be reached with these layer shapes.
    ///
    /// ```
    /// use misr_core::neuralnet::Architecture;
    ///
    /// let n = Architecture::MISR.param_count();
    /// assert_eq!(n, 106_793);
    /// assert_ne!(n, 119_610);
    /// assert_eq!(n, 16_128 + 73_792 + 5_193 + 11_680);
    /// ```
    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .conv
            .iter()
            .map(|c| c.cout * c.cin * c.k * c.k + c.cout)
            .sum();
        let d = &self.deconv;
        conv + d.cin * d.cout * d.k * d.k + d.cout
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(weight_shape: [usize; 4], bias_len: usize) -> Self {
        Self {
            weight: Tensor::zeros(weight_shape),
            bias: vec![T::zero(); bias_len],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    arch: Architecture,
    pub conv: [Layer<T>; 3],
    pub deconv: Layer<T>,
}

/// Names of the parameter tensors in their declared order.
pub const TENSOR_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "deconv.weight",
    "deconv.bias",
];

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            conv: std::array::from_fn(|i| {
                let c = arch.conv[i];
                Layer::zeros(c.weight_shape(), c.cout)
            }),
            deconv: Layer::zeros(arch.deconv.weight_shape(), arch.deconv.cout),
        }
    }

    /// Zero-mean normal weights with standard deviation `√(2 / fan_in)`,
    /// zero biases. The fan-in of the transposed convolution is the number
    /// of input taps reaching one output pixel, `cin · (k / stride)²`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let fans: [usize; 4] = [
            arch.conv[0].cin * arch.conv[0].k * arch.conv[0].k,
            arch.conv[1].cin * arch.conv[1].k * arch.conv[1].k,
            arch.conv[2].cin * arch.conv[2].k * arch.conv[2].k,
            {
                let d = arch.deconv;
                let taps = d.k.div_ceil(d.stride);
                d.cin * taps * taps
            },
        ];
        for (i, fan_in) in fans.into_iter().enumerate() {
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut r = rng(derive(seed, Stream::Init, i as u64));
            let weights = if i < 3 {
                &mut params.conv[i].weight
            } else {
                &mut params.deconv.weight
            };
            for v in weights.as_mut_slice() {
                *v = T::from_f64(normal.sample(&mut r));
            }
        }
        params
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    /// `(name, shape, values)` in declared order. Biases have shape `[n, 1, 1, 1]`.
    pub fn tensors(&self) -> Vec<(&'static str, [usize; 4], &[T])> {
        let mut out = Vec::with_capacity(8);
        let layers = self.conv.iter().chain(std::iter::once(&self.deconv));
        for (i, layer) in layers.enumerate() {
            out.push((TENSOR_NAMES[2 * i], layer.weight.shape(), layer.weight.as_slice()));
            out.push((
                TENSOR_NAMES[2 * i + 1],
                [layer.bias.len(), 1, 1, 1],
                layer.bias.as_slice(),
            ));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(8);
        let layers = self.conv.iter_mut().chain(std::iter::once(&mut self.deconv));
        for layer in layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn fill(&mut self, value: T) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let layer = |l: &Layer<T>| Layer {
            weight: l.weight.cast(),
            bias: l.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        };
        NetworkParams {
            arch: self.arch,
            conv: std::array::from_fn(|i| layer(&self.conv[i])),
            deconv: layer(&self.deconv),
        }
    }
}

/// Activations and scratch buffers for one sample, reused across samples.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    h: usize,
    w: usize,
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    deconv_out: Vec<T>,
    output: Vec<T>,
    scratch: Vec<T>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
    grad_out: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Self {
            h: 0,
            w: 0,
            cols: Default::default(),
            acts: Default::default(),
            deconv_out: Vec::new(),
            output: Vec::new(),
            scratch: Vec::new(),
            grad_a: Vec::new(),
            grad_b: Vec::new(),
            grad_out: Vec::new(),
        }
    }

    /// The last forward output, `(stride·h) × (stride·w)` row-major.
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

/// Runs one `channels × h × w` sample; the result is left in
/// [`Workspace::output`] together with everything the backward pass needs.
pub fn forward_sample<T: Scalar>(
    params: &NetworkParams<T>,
    input: &[T],
    h: usize,
    w: usize,
    ws: &mut Workspace<T>,
) -> Result<(), NnError> {
    let arch = params.arch;
    let (oh, ow) = arch.validate(h, w)?;
    if input.len() != arch.inputs() * h * w {
        return Err(NnError::Shape(format!(
            "expected {} input channels of {h}x{w}, got {} values",
            arch.inputs(),
            input.len()
        )));
    }
    ws.h = h;
    ws.w = w;
    let plane = h * w;
    for i in 0..3 {
        let shape = arch.conv[i];
        let layer = &params.conv[i];
        let mut act = std::mem::take(&mut ws.acts[i]);
        act.resize(shape.cout * plane, T::zero());
        let src: &[T] = if i == 0 { input } else { &ws.acts[i - 1] };
        conv_forward_sample(
            src,
            h,
            w,
            &shape,
            layer.weight.as_slice(),
            &layer.bias,
            &mut ws.cols[i],
            &mut act,
        )?;
        relu_in_place(&mut act);
        ws.acts[i] = act;
    }

    let d = arch.deconv;
    ws.deconv_out.resize(d.cout * oh * ow, T::zero());
    deconv_forward_sample(
        &ws.acts[2],
        h,
        w,
        &d,
        params.deconv.weight.as_slice(),
        &params.deconv.bias,
        &mut ws.scratch,
        &mut ws.deconv_out,
    )?;
    relu_in_place(&mut ws.deconv_out);

    let out_plane = oh * ow;
    ws.output.clear();
    ws.output.resize(out_plane, T::zero());
    for chunk in ws.deconv_out.chunks_exact(out_plane) {
        for (o, &v) in ws.output.iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    let inv = T::from_f64(1.0 / d.cout as f64);
    ws.output.iter_mut().for_each(|v| *v = *v * inv);
    Ok(())
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the last forward output is `d_output`.
pub fn backward_sample<T: Scalar>(
    params: &NetworkParams<T>,
    d_output: &[T],
    ws: &mut Workspace<T>,
    grads: &mut NetworkParams<T>,
) -> Result<(), NnError> {
    let arch = params.arch;
    let (h, w) = (ws.h, ws.w);
    let plane = h * w;
    let d = arch.deconv;
    let out_plane = ws.output.len();
    if d_output.len() != out_plane {
        return Err(NnError::Shape(format!(
            "output gradient has {} values, expected {out_plane}",
            d_output.len()
        )));
    }

    // mean over channels, then the final ReLU
    let inv = T::from_f64(1.0 / d.cout as f64);
    ws.grad_out.resize(d.cout * out_plane, T::zero());
    for (chunk, out) in ws
        .grad_out
        .chunks_exact_mut(out_plane)
        .zip(ws.deconv_out.chunks_exact(out_plane))
    {
        for ((g, &dy), &y) in chunk.iter_mut().zip(d_output).zip(out) {
            *g = if y > T::zero() { dy * inv } else { T::zero() };
        }
    }

    ws.grad_a.resize(d.cin * plane, T::zero());
    {
        let Layer { weight: dw, bias: db } = &mut grads.deconv;
        deconv_backward_sample(
            &ws.acts[2],
            h,
            w,
            &d,
            params.deconv.weight.as_slice(),
            &ws.grad_out,
            &mut ws.scratch,
            dw.as_mut_slice(),
            db,
            Some(&mut ws.grad_a),
        )?;
    }

    for i in (0..3).rev() {
        let shape = arch.conv[i];
        relu_backward_in_place(&ws.acts[i], &mut ws.grad_a);
        let src_len = shape.cin * plane;
        let want_dx = i > 0;
        ws.grad_b.resize(src_len, T::zero());
        let Layer { weight: dw, bias: db } = &mut grads.conv[i];
        let dx = if want_dx {
            Some((ws.grad_b.as_mut_slice(), &mut ws.scratch))
        } else {
            None
        };
        conv_backward_sample(
            h,
            w,
            &shape,
            params.conv[i].weight.as_slice(),
            &ws.cols[i],
            &ws.grad_a,
            dw.as_mut_slice(),
            db,
            dx,
        )?;
        if want_dx {
            std::mem::swap(&mut ws.grad_a, &mut ws.grad_b);
        }
    }
    Ok(())
}

/// Batched forward pass: `[n, 5, h, w] → [n, 1, 3h, 3w]`, unclamped.
pub fn forward<T: Scalar>(params: &NetworkParams<T>, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if x.channels() != params.arch.inputs() {
        return Err(NnError::Shape(format!(
            "expected {} input channels, got {}",
            params.arch.inputs(),
            x.channels()
        )));
    }
    let (oh, ow) = params.arch.validate(x.height(), x.width())?;
    let mut out = Tensor::zeros([x.batch(), 1, oh, ow]);
    let mut ws = Workspace::new();
    for n in 0..x.batch() {
        forward_sample(params, x.sample(n), x.height(), x.width(), &mut ws)?;
        out.sample_mut(n).copy_from_slice(ws.output());
    }
    Ok(out)
}

pub fn param_count<T: Scalar>(params: &NetworkParams<T>) -> usize {
    params.param_count()
}
