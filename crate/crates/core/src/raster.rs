//! Single-band rasters, clear/concealed quality masks and their PNG encodings.
//!
//! Intensities are held as `f64` in `[0, 1]`, obtained from 16-bit samples by
//! dividing by 65535 so that full scale maps to exactly `1.0`.

use std::cmp::Ordering;
use std::fmt;
use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

/// Largest raw sample value of a 16-bit raster.
pub const RAW_MAX: f64 = 65535.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("decode error: {0}")]
    Decode(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("crop ({u},{v}) {w}x{h} exceeds {width}x{height} raster")]
    Bounds {
        u: usize,
        v: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("expected {expected} values for a {width}x{height} raster, got {actual}")]
    Length {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    Range { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Real-valued raster without a range constraint.
///
/// Network outputs and metric inputs such as `SR + c` live here; an [`Image`]
/// is a `Plane` whose values are known to lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `c` to every sample without clamping.
    pub fn offset(&self, c: f64) -> Plane {
        self.map(|v| v + c)
    }

    pub fn mean(&self) -> f64 {
        kahan_sum(self.data.iter().copied()) / self.data.len() as f64
    }

    pub fn crop(&self, u: usize, v: usize, w: usize, h: usize) -> Result<Plane> {
        check_crop(self.width, self.height, u, v, w, h)?;
        let mut data = Vec::with_capacity(w * h);
        for y in v..v + h {
            data.extend_from_slice(&self.row(y)[u..u + w]);
        }
        Ok(Plane {
            width: w,
            height: h,
            data,
        })
    }

    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn clamp_to_image(&self) -> Image {
        Image(self.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    /// Validates the `[0, 1]` range and wraps as an [`Image`].
    pub fn into_image(self) -> Result<Image> {
        Image::from_plane(self)
    }
}

/// Single-band image with every intensity in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Plane);

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_plane(Plane::new(width, height, data)?)
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if let Some((index, &value)) = plane
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RasterError::Range { index, value });
        }
        Ok(Image(plane))
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_plane(Plane::filled(width, height, value))
    }

    pub fn from_raw(width: usize, height: usize, raw: &[u16]) -> Result<Self> {
        check_len(width, height, raw.len())?;
        let data = raw.iter().map(|&r| f64::from(r) / RAW_MAX).collect();
        Ok(Image(Plane {
            width,
            height,
            data,
        }))
    }

    /// Nearest 16-bit sample for each intensity.
    pub fn to_raw(&self) -> Vec<u16> {
        self.0
            .data
            .iter()
            .map(|&v| (v * RAW_MAX).round() as u16)
            .collect()
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    pub fn crop(&self, u: usize, v: usize, w: usize, h: usize) -> Result<Image> {
        self.0.crop(u, v, w, h).map(Image)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Image> {
        decode_image(bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_image(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        decode_image(&bytes)
            .map_err(|e| RasterError::Decode(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, encode_image(self)?)?;
        Ok(())
    }
}

impl std::ops::Deref for Image {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}

impl AsRef<Plane> for Image {
    fn as_ref(&self) -> &Plane {
        &self.0
    }
}

impl AsRef<Plane> for Plane {
    fn as_ref(&self) -> &Plane {
        self
    }
}

/// Exact clear-pixel count over a total, compared as a rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Clearance {
    pub clear: usize,
    pub total: usize,
}

impl Clearance {
    pub fn fraction(&self) -> f64 {
        self.clear as f64 / self.total as f64
    }

    pub fn concealed(&self) -> usize {
        self.total - self.clear
    }

    /// `clear / total >= threshold`, decided in integer arithmetic.
    pub fn meets(&self, threshold: Threshold) -> bool {
        (self.clear as u128) * u128::from(Threshold::SCALE)
            >= u128::from(threshold.ppm) * (self.total as u128)
    }
}

impl PartialOrd for Clearance {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Clearance {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = (self.clear as u128) * (other.total as u128);
        let rhs = (other.clear as u128) * (self.total as u128);
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Clearance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({:.5})", self.clear, self.total, self.fraction())
    }
}

/// A clearance threshold in parts per million, so that comparisons such as
/// `>= 0.6` are exact on integer pixel counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Threshold {
    ppm: u32,
}

impl Threshold {
    pub const SCALE: u32 = 1_000_000;

    pub fn from_fraction(fraction: f64) -> Option<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return None;
        }
        Some(Self {
            ppm: (fraction * f64::from(Self::SCALE)).round() as u32,
        })
    }

    pub fn fraction(&self) -> f64 {
        f64::from(self.ppm) / f64::from(Self::SCALE)
    }
}

/// Per-pixel clear (`true`) / concealed (`false`) flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QualityMask {
    width: usize,
    height: usize,
    clear: Vec<bool>,
}

impl QualityMask {
    pub fn new(width: usize, height: usize, clear: Vec<bool>) -> Result<Self> {
        check_len(width, height, clear.len())?;
        Ok(Self {
            width,
            height,
            clear,
        })
    }

    pub fn all_clear(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            clear: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut clear = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                clear.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            clear,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn is_clear(&self, x: usize, y: usize) -> bool {
        self.clear[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, clear: bool) {
        self.clear[y * self.width + x] = clear;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[bool] {
        &self.clear[y * self.width..(y + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.clear
    }

    pub fn clear_count(&self) -> usize {
        self.clear.iter().filter(|&&c| c).count()
    }

    pub fn clearance(&self) -> Clearance {
        Clearance {
            clear: self.clear_count(),
            total: self.clear.len(),
        }
    }

    /// Coordinates of clear pixels in row-major order.
    pub fn clear_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.clear
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn crop(&self, u: usize, v: usize, w: usize, h: usize) -> Result<QualityMask> {
        check_crop(self.width, self.height, u, v, w, h)?;
        let mut clear = Vec::with_capacity(w * h);
        for y in v..v + h {
            clear.extend_from_slice(&self.row(y)[u..u + w]);
        }
        Ok(QualityMask {
            width: w,
            height: h,
            clear,
        })
    }

    pub fn decode_png(bytes: &[u8]) -> Result<QualityMask> {
        decode_mask(bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_mask(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QualityMask> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        decode_mask(&bytes).map_err(|e| RasterError::Decode(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, encode_mask(self)?)?;
        Ok(())
    }
}

/// Fraction of clear pixels. An empty mask has clearance 0.
pub fn clearance(mask: &QualityMask) -> f64 {
    if mask.clear.is_empty() {
        return 0.0;
    }
    mask.clearance().fraction()
}

pub fn crop(img: &Image, u: usize, v: usize, w: usize, h: usize) -> Result<Image> {
    img.crop(u, v, w, h)
}

fn check_len(width: usize, height: usize, actual: usize) -> Result<()> {
    let expected = width * height;
    if expected != actual {
        return Err(RasterError::Length {
            width,
            height,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_crop(width: usize, height: usize, u: usize, v: usize, w: usize, h: usize) -> Result<()> {
    let fits = u.checked_add(w).is_some_and(|r| r <= width)
        && v.checked_add(h).is_some_and(|b| b <= height);
    if !fits {
        return Err(RasterError::Bounds {
            u,
            v,
            w,
            h,
            width,
            height,
        });
    }
    Ok(())
}

pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

struct Decoded {
    width: usize,
    height: usize,
    bit_depth: png::BitDepth,
    samples: Vec<u16>,
}

fn decode_gray(bytes: &[u8]) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // Keep the stored bit depth: no palette expansion, no 16->8 stripping.
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| RasterError::Decode(format!("malformed PNG: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(RasterError::Decode(format!(
            "expected a single-band grayscale raster, found {color:?} ({} bands)",
            color.samples()
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| RasterError::Decode(format!("malformed PNG data: {e}")))?;
    let width = frame.width as usize;
    let height = frame.height as usize;
    let line = frame.line_size;
    let bits = depth as usize;
    let mut samples = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * line..(y + 1) * line];
        match depth {
            png::BitDepth::Sixteen => {
                samples.extend(row[..2 * width].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
            }
            png::BitDepth::Eight => samples.extend(row[..width].iter().map(|&b| u16::from(b))),
            _ => {
                let per_byte = 8 / bits;
                let max = (1u16 << bits) - 1;
                for x in 0..width {
                    let byte = row[x / per_byte];
                    let shift = 8 - bits * (x % per_byte + 1);
                    samples.push(u16::from(byte >> shift) & max);
                }
            }
        }
    }
    Ok(Decoded {
        width,
        height,
        bit_depth: depth,
        samples,
    })
}

/// Decodes a 16-bit single-band PNG into intensities `raw / 65535`.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let decoded = decode_gray(bytes)?;
    if decoded.bit_depth != png::BitDepth::Sixteen {
        return Err(RasterError::Decode(format!(
            "expected 16-bit samples, found {}-bit",
            decoded.bit_depth as u8
        )));
    }
    Image::from_raw(decoded.width, decoded.height, &decoded.samples)
}

/// Encodes as a 16-bit grayscale PNG with fixed compression settings, so that
/// the same image always yields the same bytes.
pub fn encode_image(img: &Image) -> Result<Vec<u8>> {
    let raw = img.to_raw();
    let mut bytes = Vec::with_capacity(raw.len() * 2);
    for r in raw {
        bytes.extend_from_slice(&r.to_be_bytes());
    }
    write_png(img.width(), img.height(), png::BitDepth::Sixteen, &bytes)
}

/// Decodes a mask: zero is concealed, any nonzero sample is clear. Accepts
/// grayscale PNGs of any bit depth.
pub fn decode_mask(bytes: &[u8]) -> Result<QualityMask> {
    let decoded = decode_gray(bytes)?;
    let clear = decoded.samples.iter().map(|&s| s != 0).collect();
    QualityMask::new(decoded.width, decoded.height, clear)
}

/// Encodes a mask as 8-bit grayscale, 255 = clear, 0 = concealed.
pub fn encode_mask(mask: &QualityMask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = mask.clear.iter().map(|&c| if c { 255 } else { 0 }).collect();
    write_png(mask.width, mask.height, png::BitDepth::Eight, &bytes)
}

fn write_png(width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let w = u32::try_from(width).map_err(|_| RasterError::Encode("width too large".into()))?;
    let h = u32::try_from(height).map_err(|_| RasterError::Encode("height too large".into()))?;
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w, h);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(depth);
        encoder.set_compression(png::Compression::Balanced);
        encoder.set_filter(png::Filter::Adaptive);
        let mut writer = encoder
            .write_header()
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        writer
            .finish()
            .map_err(|e| RasterError::Encode(e.to_string()))?;
    }
    Ok(out)
}
