//! Layer kernels and their reverse-mode gradients.
//!
//! Convolutions go through `im2col` and a single GEMM per batch entry. The
//! transposed convolution runs the same machinery backwards: a GEMM into
//! column space followed by a strided `col2im` scatter.

use super::scalar::{gemm, MatRef, Scalar};
use super::tensor::Tensor;
use super::NnError;

/// Sampling grid shared by `im2col` and `col2im`: `grid` positions at
/// `stride` spacing, shifted by `-pad`, over a `k×k` window of a
/// `channels×height×width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patches {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Patches {
    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Source coordinate of grid position `o` at kernel tap `t`, if inside.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let s = (o * self.stride + t) as isize - self.pad as isize;
        (s >= 0 && (s as usize) < extent).then_some(s as usize)
    }

    /// Grid positions whose source column for tap `kx` lies inside the
    /// image: `ox` in `lo..hi`.
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < self.grid_w && self.source(lo, kx, self.width).is_none() {
            lo += 1;
        }
        let mut hi = self.grid_w;
        while hi > lo && self.source(hi - 1, kx, self.width).is_none() {
            hi -= 1;
        }
        (lo, hi)
    }
}

/// `col[(c·k + ky)·k + kx][oy·grid_w + ox] = x[c][oy·s + ky − p][ox·s + kx − p]`,
/// zero outside the image.
pub fn im2col<T: Scalar>(x: &[T], g: &Patches, col: &mut [T]) {
    debug_assert_eq!(x.len(), g.channels * g.height * g.width);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let cols = g.cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * cols;
                let dst = &mut col[row..row + cols];
                let (lo, hi) = g.valid_x(kx);
                for oy in 0..g.grid_h {
                    let out = &mut dst[oy * g.grid_w..(oy + 1) * g.grid_w];
                    let Some(sy) = g.source(oy, ky, g.height) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let line = &src[sy * g.width..(sy + 1) * g.width];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        out[lo..hi].copy_from_slice(&line[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = line[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub fn col2im<T: Scalar>(col: &[T], g: &Patches, x: &mut [T]) {
    debug_assert_eq!(x.len(), g.channels * g.height * g.width);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let cols = g.cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut x[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * cols;
                let src = &col[row..row + cols];
                let (lo, hi) = g.valid_x(kx);
                for oy in 0..g.grid_h {
                    let Some(sy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    let line = &mut dst[sy * g.width..(sy + 1) * g.width];
                    let vals = &src[oy * g.grid_w..(oy + 1) * g.grid_w];
                    for ox in lo..hi {
                        let sx = ox * g.stride + kx - g.pad;
                        line[sx] = line[sx] + vals[ox];
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution geometry for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let oh = (h + 2 * self.pad + 1).checked_sub(self.k);
        let ow = (w + 2 * self.pad + 1).checked_sub(self.k);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(NnError::Shape(format!(
                "{}x{} kernel with padding {} does not fit {h}x{w}",
                self.k, self.k, self.pad
            ))),
        }
    }

    pub fn patches(&self, h: usize, w: usize) -> Result<Patches, NnError> {
        let (grid_h, grid_w) = self.out_size(h, w)?;
        Ok(Patches {
            channels: self.cin,
            height: h,
            width: w,
            k: self.k,
            stride: 1,
            pad: self.pad,
            grid_h,
            grid_w,
        })
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.k, self.k]
    }
}

/// Transposed convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvShape {
    /// `(h − 1)·stride − 2·pad + k` on each axis.
    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let f = |n: usize| ((n.max(1) - 1) * self.stride + self.k).checked_sub(2 * self.pad);
        match (f(h), f(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 && h > 0 && w > 0 => Ok((oh, ow)),
            _ => Err(NnError::Shape(format!(
                "transposed convolution does not fit a {h}x{w} input"
            ))),
        }
    }

    /// Patch grid over the *output*, one position per input pixel.
    pub fn patches(&self, h: usize, w: usize) -> Result<Patches, NnError> {
        let (oh, ow) = self.out_size(h, w)?;
        Ok(Patches {
            channels: self.cout,
            height: oh,
            width: ow,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            grid_h: h,
            grid_w: w,
        })
    }

    /// `Some(q)` when `k = stride·(2q+1)` and `pad = stride·q`: then every
    /// output pixel reads a `(2q+1)²` input neighbourhood and the layer is
    /// a stride-1 convolution followed by a pixel shuffle.
    pub fn subpixel_reach(&self) -> Option<usize> {
        let s = self.stride;
        if s == 0 || !self.k.is_multiple_of(s) || !self.pad.is_multiple_of(s) {
            return None;
        }
        let q = self.pad / s;
        (self.k / s == 2 * q + 1).then_some(q)
    }

    /// `[cin, cout, k, k]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cin, self.cout, self.k, self.k]
    }
}

fn expect_shape(what: &str, got: [usize; 4], want: [usize; 4]) -> Result<(), NnError> {
    if got != want {
        return Err(NnError::Shape(format!("{what}: got {got:?}, expected {want:?}")));
    }
    Ok(())
}

fn conv_shape_of<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    pad: usize,
) -> Result<ConvShape, NnError> {
    let [cout, cin, k, k2] = weight.shape();
    if k != k2 {
        return Err(NnError::Shape(format!("non-square kernel {k}x{k2}")));
    }
    if x.channels() != cin {
        return Err(NnError::Shape(format!(
            "input has {} channels, kernel expects {cin}",
            x.channels()
        )));
    }
    if bias.len() != cout {
        return Err(NnError::Shape(format!("bias has {} entries, expected {cout}", bias.len())));
    }
    Ok(ConvShape { cin, cout, k, pad })
}

/// Forward pass of one batch entry: `out = W·im2col(x) + b`. `col` is
/// resized and left holding the patch matrix for reuse in the backward pass.
pub fn conv_forward_sample<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &ConvShape,
    weight: &[T],
    bias: &[T],
    col: &mut Vec<T>,
    out: &mut [T],
) -> Result<(), NnError> {
    let g = shape.patches(h, w)?;
    col.resize(g.rows() * g.cols(), T::zero());
    im2col(x, &g, col);
    let n = g.cols();
    for (c, chunk) in out.chunks_exact_mut(n).enumerate() {
        chunk.fill(bias[c]);
    }
    gemm(
        MatRef::new(weight, shape.cout, g.rows()),
        MatRef::new(col, g.rows(), n),
        T::one(),
        out,
    );
    Ok(())
}

/// Gradients of one batch entry. `dw` and `db` accumulate; `dx`, if given,
/// is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_sample<T: Scalar>(
    h: usize,
    w: usize,
    shape: &ConvShape,
    weight: &[T],
    col: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<(&mut [T], &mut Vec<T>)>,
) -> Result<(), NnError> {
    let g = shape.patches(h, w)?;
    let n = g.cols();
    for (c, chunk) in dy.chunks_exact(n).enumerate() {
        db[c] = db[c] + chunk.iter().copied().sum::<T>();
    }
    gemm(
        MatRef::new(dy, shape.cout, n),
        MatRef::new(col, g.rows(), n).t(),
        T::one(),
        dw,
    );
    if let Some((dx, dcol)) = dx {
        dcol.resize(g.rows() * n, T::zero());
        gemm(
            MatRef::new(weight, shape.cout, g.rows()).t(),
            MatRef::new(dy, shape.cout, n),
            T::zero(),
            dcol,
        );
        dx.fill(T::zero());
        col2im(dcol, &g, dx);
    }
    Ok(())
}

/// Stride-1 cross-correlation with zero padding. `weight` is
/// `[cout, cin, k, k]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let shape = conv_shape_of(x, weight, bias, pad)?;
    let (oh, ow) = shape.out_size(x.height(), x.width())?;
    let mut out = Tensor::zeros([x.batch(), shape.cout, oh, ow]);
    let mut col = Vec::new();
    for n in 0..x.batch() {
        conv_forward_sample(
            x.sample(n),
            x.height(),
            x.width(),
            &shape,
            weight.as_slice(),
            bias,
            &mut col,
            out.sample_mut(n),
        )?;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    pad: usize,
    dy: &Tensor<T>,
    want_dx: bool,
) -> Result<Grads<T>, NnError> {
    let shape = conv_shape_of(x, weight, bias, pad)?;
    let (oh, ow) = shape.out_size(x.height(), x.width())?;
    expect_shape("output gradient", dy.shape(), [x.batch(), shape.cout, oh, ow])?;
    let g = shape.patches(x.height(), x.width())?;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![T::zero(); shape.cout];
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    let mut dcol = Vec::new();
    for n in 0..x.batch() {
        im2col(x.sample(n), &g, &mut col);
        let dx_n = dx.as_mut().map(|t| (t.sample_mut(n), &mut dcol));
        conv_backward_sample(
            x.height(),
            x.width(),
            &shape,
            weight.as_slice(),
            &col,
            dy.sample(n),
            dw.as_mut_slice(),
            &mut db,
            dx_n,
        )?;
    }
    Ok(Grads { dx, dw, db })
}

fn deconv_shape_of<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<DeconvShape, NnError> {
    let [cin, cout, k, k2] = weight.shape();
    if k != k2 {
        return Err(NnError::Shape(format!("non-square kernel {k}x{k2}")));
    }
    if x.channels() != cin {
        return Err(NnError::Shape(format!(
            "input has {} channels, kernel expects {cin}",
            x.channels()
        )));
    }
    if bias.len() != cout {
        return Err(NnError::Shape(format!("bias has {} entries, expected {cout}", bias.len())));
    }
    if stride == 0 {
        return Err(NnError::Shape("stride must be positive".into()));
    }
    Ok(DeconvShape {
        cin,
        cout,
        k,
        stride,
        pad,
    })
}

/// Forward pass of one batch entry. Shapes that decompose into a stride-1
/// convolution followed by a pixel shuffle take that route; everything else
/// scatters kernel-sized patches with `col2im`. `cols` is scratch space.
#[allow(clippy::too_many_arguments)]
pub fn deconv_forward_sample<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &DeconvShape,
    weight: &[T],
    bias: &[T],
    cols: &mut Vec<T>,
    out: &mut [T],
) -> Result<(), NnError> {
    match shape.subpixel_reach() {
        Some(q) => subpixel_forward(x, h, w, shape, q, weight, bias, cols, out),
        None => scatter_forward(x, h, w, shape, weight, bias, cols, out),
    }
}

/// Accumulates weight and bias gradients and, if requested, overwrites
/// `dx` with the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn deconv_backward_sample<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &DeconvShape,
    weight: &[T],
    dy: &[T],
    dcols: &mut Vec<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) -> Result<(), NnError> {
    match shape.subpixel_reach() {
        Some(q) => subpixel_backward(x, h, w, shape, q, weight, dy, dcols, dw, db, dx),
        None => scatter_backward(x, h, w, shape, weight, dy, dcols, dw, db, dx),
    }
}

/// Patch grid of the equivalent stride-1 convolution: a `(2q+1)²`
/// neighbourhood around every input pixel.
fn subpixel_patches(shape: &DeconvShape, q: usize, h: usize, w: usize) -> Patches {
    Patches {
        channels: shape.cin,
        height: h,
        width: w,
        k: 2 * q + 1,
        stride: 1,
        pad: q,
        grid_h: h,
        grid_w: w,
    }
}

/// Index into the `[cin, cout, k, k]` kernel for sub-pixel row
/// `(co, ry, rx)` and patch row `(ci, dy, dx)`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn subpixel_tap(shape: &DeconvShape, q: usize, co: usize, ry: usize, rx: usize, ci: usize, dy: usize, dx: usize) -> usize {
    let s = shape.stride;
    let ky = s * (2 * q - dy) + ry;
    let kx = s * (2 * q - dx) + rx;
    ((ci * shape.cout + co) * shape.k + ky) * shape.k + kx
}

/// Rearranges the kernel into a `(cout·s²) × (cin·m²)` matrix, `m = 2q+1`.
fn subpixel_weights<T: Scalar>(shape: &DeconvShape, q: usize, weight: &[T]) -> Vec<T> {
    let s = shape.stride;
    let m = 2 * q + 1;
    let cols = shape.cin * m * m;
    let mut out = vec![T::zero(); shape.cout * s * s * cols];
    for co in 0..shape.cout {
        for ry in 0..s {
            for rx in 0..s {
                let row = ((co * s + ry) * s + rx) * cols;
                for ci in 0..shape.cin {
                    for dy in 0..m {
                        for dx in 0..m {
                            out[row + (ci * m + dy) * m + dx] =
                                weight[subpixel_tap(shape, q, co, ry, rx, ci, dy, dx)];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn subpixel_forward<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &DeconvShape,
    q: usize,
    weight: &[T],
    bias: &[T],
    cols: &mut Vec<T>,
    out: &mut [T],
) -> Result<(), NnError> {
    let g = subpixel_patches(shape, q, h, w);
    let s = shape.stride;
    let phases = shape.cout * s * s;
    let n = h * w;
    let col_len = g.rows() * n;
    cols.resize(col_len + phases * n, T::zero());
    let (col, sub) = cols.split_at_mut(col_len);
    im2col(x, &g, col);
    let wsub = subpixel_weights(shape, q, weight);
    gemm(
        MatRef::new(&wsub, phases, g.rows()),
        MatRef::new(col, g.rows(), n),
        T::zero(),
        sub,
    );
    let ow = w * s;
    for co in 0..shape.cout {
        let plane = &mut out[co * n * s * s..(co + 1) * n * s * s];
        for ry in 0..s {
            for rx in 0..s {
                let src = &sub[((co * s + ry) * s + rx) * n..][..n];
                for i in 0..h {
                    let line = &mut plane[(i * s + ry) * ow..][..ow];
                    for (j, &v) in src[i * w..(i + 1) * w].iter().enumerate() {
                        line[j * s + rx] = v + bias[co];
                    }
                }
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn subpixel_backward<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &DeconvShape,
    q: usize,
    weight: &[T],
    dy: &[T],
    dcols: &mut Vec<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) -> Result<(), NnError> {
    let g = subpixel_patches(shape, q, h, w);
    let s = shape.stride;
    let m = 2 * q + 1;
    let phases = shape.cout * s * s;
    let n = h * w;
    let ow = w * s;
    let col_len = g.rows() * n;
    dcols.resize(col_len + phases * n, T::zero());
    let (col, dsub) = dcols.split_at_mut(col_len);
    im2col(x, &g, col);
    for co in 0..shape.cout {
        let plane = &dy[co * n * s * s..(co + 1) * n * s * s];
        db[co] = db[co] + plane.iter().copied().sum::<T>();
        for ry in 0..s {
            for rx in 0..s {
                let dst = &mut dsub[((co * s + ry) * s + rx) * n..][..n];
                for i in 0..h {
                    let line = &plane[(i * s + ry) * ow..][..ow];
                    for (j, d) in dst[i * w..(i + 1) * w].iter_mut().enumerate() {
                        *d = line[j * s + rx];
                    }
                }
            }
        }
    }

    let mut dwsub = vec![T::zero(); phases * g.rows()];
    gemm(
        MatRef::new(dsub, phases, n),
        MatRef::new(col, g.rows(), n).t(),
        T::zero(),
        &mut dwsub,
    );
    for co in 0..shape.cout {
        for ry in 0..s {
            for rx in 0..s {
                let row = ((co * s + ry) * s + rx) * g.rows();
                for ci in 0..shape.cin {
                    for ty in 0..m {
                        for tx in 0..m {
                            let at = subpixel_tap(shape, q, co, ry, rx, ci, ty, tx);
                            dw[at] = dw[at] + dwsub[row + (ci * m + ty) * m + tx];
                        }
                    }
                }
            }
        }
    }

    if let Some(dx) = dx {
        let wsub = subpixel_weights(shape, q, weight);
        gemm(
            MatRef::new(&wsub, phases, g.rows()).t(),
            MatRef::new(dsub, phases, n),
            T::zero(),
            col,
        );
        dx.fill(T::zero());
        col2im(col, &g, dx);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn scatter_forward<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &DeconvShape,
    weight: &[T],
    bias: &[T],
    cols: &mut Vec<T>,
    out: &mut [T],
) -> Result<(), NnError> {
    let g = shape.patches(h, w)?;
    cols.resize(g.rows() * g.cols(), T::zero());
    gemm(
        MatRef::new(weight, shape.cin, g.rows()).t(),
        MatRef::new(x, shape.cin, g.cols()),
        T::zero(),
        cols,
    );
    let plane = g.height * g.width;
    for (c, chunk) in out.chunks_exact_mut(plane).enumerate() {
        chunk.fill(bias[c]);
    }
    col2im(cols, &g, out);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn scatter_backward<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    shape: &DeconvShape,
    weight: &[T],
    dy: &[T],
    dcols: &mut Vec<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) -> Result<(), NnError> {
    let g = shape.patches(h, w)?;
    let plane = g.height * g.width;
    for (c, chunk) in dy.chunks_exact(plane).enumerate() {
        db[c] = db[c] + chunk.iter().copied().sum::<T>();
    }
    dcols.resize(g.rows() * g.cols(), T::zero());
    im2col(dy, &g, dcols);
    gemm(
        MatRef::new(x, shape.cin, g.cols()),
        MatRef::new(dcols, g.rows(), g.cols()).t(),
        T::one(),
        dw,
    );
    if let Some(dx) = dx {
        gemm(
            MatRef::new(weight, shape.cin, g.rows()),
            MatRef::new(dcols, g.rows(), g.cols()),
            T::zero(),
            dx,
        );
    }
    Ok(())
}

/// Transposed convolution. `weight` is `[cin, cout, k, k]`.
pub fn deconv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let shape = deconv_shape_of(x, weight, bias, stride, pad)?;
    let (oh, ow) = shape.out_size(x.height(), x.width())?;
    let mut out = Tensor::zeros([x.batch(), shape.cout, oh, ow]);
    let mut cols = Vec::new();
    for n in 0..x.batch() {
        deconv_forward_sample(
            x.sample(n),
            x.height(),
            x.width(),
            &shape,
            weight.as_slice(),
            bias,
            &mut cols,
            out.sample_mut(n),
        )?;
    }
    Ok(out)
}

pub fn deconv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
    want_dx: bool,
) -> Result<Grads<T>, NnError> {
    let shape = deconv_shape_of(x, weight, bias, stride, pad)?;
    let (oh, ow) = shape.out_size(x.height(), x.width())?;
    expect_shape("output gradient", dy.shape(), [x.batch(), shape.cout, oh, ow])?;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![T::zero(); shape.cout];
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dcols = Vec::new();
    for n in 0..x.batch() {
        deconv_backward_sample(
            x.sample(n),
            x.height(),
            x.width(),
            &shape,
            weight.as_slice(),
            dy.sample(n),
            &mut dcols,
            dw.as_mut_slice(),
            &mut db,
            dx.as_mut().map(|t| t.sample_mut(n)),
        )?;
    }
    Ok(Grads { dx, dw, db })
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(y.as_mut_slice());
    y
}

/// Zeroes `dy` wherever the ReLU output is not positive.
pub fn relu_backward_in_place<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (g, &out) in dy.iter_mut().zip(y) {
        if !(out > T::zero()) {
            *g = T::zero();
        }
    }
}

pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    relu_backward_in_place(y.as_slice(), dx.as_mut_slice());
    dx
}

/// Mean over channels: `[n, c, h, w] → [n, 1, h, w]`.
pub fn channel_mean_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let inv = T::from_f64(1.0 / c as f64);
    let mut out = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        let src = x.sample(b);
        let dst = out.sample_mut(b);
        for ch in 0..c {
            for (d, &s) in dst.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                *d = *d + s;
            }
        }
        dst.iter_mut().for_each(|v| *v = *v * inv);
    }
    out
}

pub fn channel_mean_backward<T: Scalar>(dy: &Tensor<T>, channels: usize) -> Tensor<T> {
    let [n, _, h, w] = dy.shape();
    let inv = T::from_f64(1.0 / channels as f64);
    let mut dx = Tensor::zeros([n, channels, h, w]);
    for b in 0..n {
        let g = dy.sample(b);
        for chunk in dx.sample_mut(b).chunks_exact_mut(h * w) {
            for (d, &s) in chunk.iter_mut().zip(g) {
                *d = s * inv;
            }
        }
    }
    dx
}

/// Mean squared residual over the clear pixels (all pixels without a mask)
/// and its gradient `2·(pred − target)/|clear|`. `None` when nothing is
/// clear.
pub fn masked_mse<T: Scalar>(pred: &[T], target: &[T], mask: Option<&[bool]>) -> Option<(f64, Vec<T>)> {
    assert_eq!(pred.len(), target.len());
    let count = match mask {
        Some(m) => {
            assert_eq!(m.len(), pred.len());
            m.iter().filter(|&&c| c).count()
        }
        None => pred.len(),
    };
    if count == 0 {
        return None;
    }
    let scale = T::from_f64(2.0 / count as f64);
    let mut grad = vec![T::zero(); pred.len()];
    let mut sum = 0.0f64;
    for i in 0..pred.len() {
        if mask.is_none_or(|m| m[i]) {
            let r = pred[i] - target[i];
            let rf = r.as_f64();
            sum += rf * rf;
            grad[i] = r * scale;
        }
    }
    Some((sum / count as f64, grad))
}

/// [`masked_mse`] over a `[1, 1, h, w]` prediction.
pub fn masked_mse_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &crate::raster::Image,
    target_mask: Option<&crate::raster::QualityMask>,
) -> Result<Option<(f64, Tensor<T>)>, NnError> {
    expect_shape(
        "prediction",
        pred.shape(),
        [1, 1, target.height(), target.width()],
    )?;
    if let Some(m) = target_mask {
        if m.dims() != target.dims() {
            return Err(NnError::Shape(format!(
                "mask {:?} does not match target {:?}",
                m.dims(),
                target.dims()
            )));
        }
    }
    let t: Vec<T> = target.as_slice().iter().map(|&v| T::from_f64(v)).collect();
    Ok(masked_mse(pred.as_slice(), &t, target_mask.map(|m| m.as_slice())).map(|(loss, g)| {
        let grad = Tensor::from_vec(pred.shape(), g).expect("same shape as prediction");
        (loss, grad)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn([2, 1, 4, 5], |i| i as f64 * 0.1);
        let w = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn averaging_kernel_matches_direct_convolution() {
        let x = Tensor::<f64>::from_fn([1, 1, 5, 6], |_| 0.7);
        let w = Tensor::from_vec([1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], 1).unwrap();
        // direct oracle: mean of in-bounds neighbours times their share of 9
        for oy in 0..5 {
            for ox in 0..6 {
                let mut acc = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (oy as isize + ky - 1, ox as isize + kx - 1);
                        if (0..5).contains(&sy) && (0..6).contains(&sx) {
                            acc += 0.7 / 9.0;
                        }
                    }
                }
                let got = y.as_slice()[oy * 6 + ox];
                assert!((got - acc).abs() < 1e-15);
            }
        }
        assert!((y.as_slice()[2 * 6 + 2] - 0.7).abs() < 1e-15);
        assert!((y.as_slice()[0] - 0.7 * 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn delta_kernel_deconv_spreads_by_stride() {
        // kernel with a single 1 at the centre (4,4): input pixel (i,j) lands
        // on output (3i + 4 - 3, 3j + 4 - 3) = (3i+1, 3j+1).
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |i| 1.0 + i as f64);
        let mut w = Tensor::zeros([1, 1, 9, 9]);
        w.as_mut_slice()[4 * 9 + 4] = 1.0;
        let y = deconv2d_forward(&x, &w, &[0.0], 3, 3).unwrap();
        assert_eq!(y.shape(), [1, 1, 12, 12]);
        for oy in 0..12 {
            for ox in 0..12 {
                let v = y.as_slice()[oy * 12 + ox];
                if oy % 3 == 1 && ox % 3 == 1 {
                    assert_eq!(v, x.as_slice()[(oy / 3) * 4 + ox / 3]);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn deconv_output_size() {
        let shape = DeconvShape {
            cin: 9,
            cout: 16,
            k: 9,
            stride: 3,
            pad: 3,
        };
        assert_eq!(shape.out_size(128, 128).unwrap(), (384, 384));
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([3, 5, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, &[0.0; 3], 1), Err(NnError::Shape(_))));
        let w = Tensor::zeros([3, 2, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, &[0.0; 2], 1), Err(NnError::Shape(_))));
        let w = Tensor::zeros([3, 2, 7, 7]);
        assert!(matches!(conv2d_forward(&x, &w, &[0.0; 3], 0), Err(NnError::Shape(_))));
        let dw = Tensor::zeros([4, 3, 9, 9]);
        assert!(matches!(deconv2d_forward(&x, &dw, &[0.0; 3], 3, 3), Err(NnError::Shape(_))));
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let g = Patches {
            channels: 2,
            height: 7,
            width: 8,
            k: 3,
            stride: 2,
            pad: 1,
            grid_h: 4,
            grid_w: 4,
        };
        let x: Vec<f64> = (0..2 * 7 * 8).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let c: Vec<f64> = (0..g.rows() * g.cols()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut col = vec![0.0; g.rows() * g.cols()];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn loss_examples() {
        let pred = [0.2f64, 0.4, 0.6];
        assert_eq!(masked_mse(&pred, &pred, None).unwrap().0, 0.0);
        let target = [0.1, 0.3, 0.5];
        let (loss, grad) = masked_mse(&pred, &target, None).unwrap();
        assert!((loss - 0.01).abs() < 1e-15);
        for g in grad {
            assert!((g - 2.0 * 0.1 / 3.0).abs() < 1e-15);
        }
        let mask = [true, false, true];
        let (_, grad) = masked_mse(&pred, &target, Some(&mask)).unwrap();
        assert_eq!(grad[1], 0.0);
        assert!((grad[0] - 0.1).abs() < 1e-15);
        assert!(masked_mse(&pred, &target, Some(&[false; 3])).is_none());
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut r = crate::seed::rng(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn subpixel_route_matches_scatter_route() {
        let shapes = [
            DeconvShape { cin: 3, cout: 4, k: 9, stride: 3, pad: 3 },
            DeconvShape { cin: 2, cout: 2, k: 3, stride: 1, pad: 1 },
            DeconvShape { cin: 2, cout: 3, k: 10, stride: 2, pad: 4 },
        ];
        for (n, shape) in shapes.into_iter().enumerate() {
            let q = shape.subpixel_reach().expect("decomposable");
            let (h, w) = (5, 4);
            let (oh, ow) = shape.out_size(h, w).unwrap();
            let x = random(shape.cin * h * w, n as u64);
            let wt = random(shape.weight_shape().iter().product(), 10 + n as u64);
            let b = random(shape.cout, 20 + n as u64);
            let dy = random(shape.cout * oh * ow, 30 + n as u64);

            let mut fast = vec![0.0; shape.cout * oh * ow];
            let mut slow = fast.clone();
            let mut scratch = Vec::new();
            subpixel_forward(&x, h, w, &shape, q, &wt, &b, &mut scratch, &mut fast).unwrap();
            scatter_forward(&x, h, w, &shape, &wt, &b, &mut scratch, &mut slow).unwrap();
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "{shape:?}");
            }

            let mut grads = [(vec![0.0; wt.len()], vec![0.0; shape.cout], vec![0.0; x.len()]), (vec![0.0; wt.len()], vec![0.0; shape.cout], vec![0.0; x.len()])];
            let [(dw1, db1, dx1), (dw2, db2, dx2)] = &mut grads;
            subpixel_backward(&x, h, w, &shape, q, &wt, &dy, &mut scratch, dw1, db1, Some(dx1)).unwrap();
            scatter_backward(&x, h, w, &shape, &wt, &dy, &mut scratch, dw2, db2, Some(dx2)).unwrap();
            for (a, e) in dw1.iter().chain(db1.iter()).chain(dx1.iter()).zip(dw2.iter().chain(db2.iter()).chain(dx2.iter())) {
                assert!((a - e).abs() < 1e-11, "{shape:?}");
            }
        }
    }

    #[test]
    fn subpixel_reach_detection() {
        let d = |k, stride, pad| DeconvShape { cin: 1, cout: 1, k, stride, pad };
        assert_eq!(d(9, 3, 3).subpixel_reach(), Some(1));
        assert_eq!(d(3, 3, 0).subpixel_reach(), Some(0));
        assert_eq!(d(4, 2, 1).subpixel_reach(), None);
        assert_eq!(d(9, 3, 0).subpixel_reach(), None);
    }
}
