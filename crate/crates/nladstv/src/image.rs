//! Planar floating-point images and their file formats.
//!
//! An [`ImageField`] stores `channels` planes of `width * height` samples as
//! one flat `Vec<f64>`, plane-major then row-major. Intensities nominally
//! live in `[0, 1]` but intermediate stages (gradients, residuals, float
//! maps on disk) may exceed that range; only finiteness is enforced.
//!
//! Two on-disk formats are supported:
//! * PNG, 8- or 16-bit, grayscale or RGB, mapped to `[0, 1]` on load and
//!   quantized round-half-up on save;
//! * a raw float map (`.tvf`) — magic `TVF1`, little-endian `u32` width,
//!   height, channels, then `width * height * channels` little-endian `f32`
//!   samples in the same plane-major order. This is the lossless (at f32
//!   precision) interchange used between pipeline stages.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Cap applied to PSNR when the mean squared error is (numerically) zero.
pub const PSNR_CAP_DB: f64 = 999.0;

/// A planar multi-channel image of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Plane-major, row-major: `data[(c * height + y) * width + x]`.
    pub data: Vec<f64>,
}

impl ImageField {
    /// All-zero image.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageField {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Constant-valued image.
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        ImageField {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Wrap an existing buffer, checking length and finiteness.
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "buffer has {} samples, expected {}x{}x{} = {}",
                data.len(),
                width,
                height,
                channels,
                width * height * channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput(
                "image buffer contains non-finite samples".into(),
            ));
        }
        Ok(ImageField {
            width,
            height,
            channels,
            data,
        })
    }

    /// Zero image with this image's shape.
    pub fn zeros_like(&self) -> Self {
        ImageField::new(self.width, self.height, self.channels)
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    /// One channel plane as a slice of `width * height` samples.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &ImageField) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean inner product over all samples.
    pub fn dot(&self, other: &ImageField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Euclidean norm over all samples.
    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + other`, elementwise.
    pub fn add(&self, other: &ImageField) -> ImageField {
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o += b;
        }
        out
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ImageField) -> ImageField {
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        out
    }

    /// `self * a`, elementwise.
    pub fn scaled(&self, a: f64) -> ImageField {
        let mut out = self.clone();
        for o in out.data.iter_mut() {
            *o *= a;
        }
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &ImageField) {
        for (o, b) in self.data.iter_mut().zip(&x.data) {
            *o += a * b;
        }
    }

    /// Largest absolute sample difference against `other`.
    pub fn max_abs_diff(&self, other: &ImageField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rec. 601 luminance. Single-channel images pass through as a copy.
pub fn luminance(img: &ImageField) -> Result<ImageField> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let n = img.width * img.height;
            let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                data.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
            }
            Ok(ImageField {
                width: img.width,
                height: img.height,
                channels: 1,
                data,
            })
        }
        c => Err(Error::InvalidParameter(format!(
            "luminance expects 1 or 3 channels, got {c}"
        ))),
    }
}

/// Peak signal-to-noise ratio in dB, jointly over all channels.
///
/// `peak` is the nominal dynamic range (1.0 for unit-range images). Returns
/// [`PSNR_CAP_DB`] when the images agree to numerical zero.
pub fn psnr(reference: &ImageField, test: &ImageField, peak: f64) -> Result<f64> {
    if !reference.same_shape(test) {
        return Err(Error::ShapeMismatch(format!(
            "psnr: {}x{}x{} vs {}x{}x{}",
            reference.width,
            reference.height,
            reference.channels,
            test.width,
            test.height,
            test.channels
        )));
    }
    if peak <= 0.0 {
        return Err(Error::InvalidParameter(format!("psnr peak {peak} <= 0")));
    }
    let n = reference.data.len() as f64;
    let mse: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma`.
///
/// Sampling is drawn from a ChaCha stream seeded with `seed`, one sample per
/// buffer element in storage order, so results are bit-reproducible across
/// runs and platforms. `sigma = 0` returns an identical copy.
pub fn add_gaussian_noise(img: &ImageField, sigma: f64, seed: u64) -> Result<ImageField> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma {sigma} must be finite and >= 0"
        )));
    }
    let mut out = img.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

const FLOAT_MAP_MAGIC: &[u8; 4] = b"TVF1";
/// Guard against absurd allocations from corrupt headers.
const MAX_SAMPLES: u64 = 1 << 30;

/// Load a PNG (`.png`) or float map (`.tvf`), dispatching on extension.
pub fn load_image(path: &Path) -> Result<ImageField> {
    match extension(path) {
        Some(ext) if ext == "tvf" => read_float_map(path),
        Some(ext) if ext == "png" => load_png(path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected a .png or .tvf file",
            path.display()
        ))),
    }
}

/// Save as PNG (`.png`, 8-bit, clamped) or float map (`.tvf`, exact at f32).
pub fn save_image(img: &ImageField, path: &Path) -> Result<()> {
    match extension(path) {
        Some(ext) if ext == "tvf" => write_float_map(img, path),
        Some(ext) if ext == "png" => save_png(img, path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected a .png or .tvf file",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_lowercase())
}

fn load_png(path: &Path) -> Result<ImageField> {
    let dynimg = ::image::open(path)?;
    use ::image::DynamicImage::*;
    let (width, height) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match dynimg {
        ImageLuma8(b) => (1, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        ImageLuma16(b) => (
            1,
            b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        ),
        ImageRgb8(b) => (3, interleaved_to_planar(&b.into_raw(), 3, |v| v as f64 / 255.0)),
        ImageRgb16(b) => (
            3,
            interleaved_to_planar(&b.into_raw(), 3, |v| v as f64 / 65535.0),
        ),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: only 8/16-bit grayscale or RGB PNG is supported",
                path.display()
            )))
        }
    };
    Ok(ImageField {
        width,
        height,
        channels,
        data,
    })
}

fn interleaved_to_planar<T: Copy>(raw: &[T], channels: usize, map: impl Fn(T) -> f64) -> Vec<f64> {
    let n = raw.len() / channels;
    let mut out = vec![0.0; raw.len()];
    for i in 0..n {
        for c in 0..channels {
            out[c * n + i] = map(raw[i * channels + c]);
        }
    }
    out
}

fn save_png(img: &ImageField, path: &Path) -> Result<()> {
    let quant = |v: f64| -> u8 { (v.clamp(0.0, 1.0) * 255.0).round() as u8 };
    let n = img.width * img.height;
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        1 => {
            let raw: Vec<u8> = img.data.iter().map(|&v| quant(v)).collect();
            let buf = ::image::GrayImage::from_raw(w, h, raw)
                .expect("raw buffer length matches dimensions");
            buf.save(path)?;
        }
        3 => {
            let mut raw = vec![0u8; n * 3];
            for i in 0..n {
                for c in 0..3 {
                    raw[i * 3 + c] = quant(img.data[c * n + i]);
                }
            }
            let buf = ::image::RgbImage::from_raw(w, h, raw)
                .expect("raw buffer length matches dimensions");
            buf.save(path)?;
        }
        c => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG output supports 1 or 3 channels, image has {c}"
            )))
        }
    }
    Ok(())
}

/// Read a `TVF1` float map.
pub fn read_float_map(path: &Path) -> Result<ImageField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated(path))?;
    if &magic != FLOAT_MAP_MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "{}: bad magic {:?}, expected \"TVF1\"",
            path.display(),
            magic
        )));
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    let channels = read_u32(&mut r, path)? as usize;
    let n = width as u64 * height as u64 * channels as u64;
    if n == 0 || n > MAX_SAMPLES {
        return Err(Error::UnsupportedFormat(format!(
            "{}: implausible dimensions {}x{}x{}",
            path.display(),
            width,
            height,
            channels
        )));
    }
    let mut bytes = vec![0u8; n as usize * 4];
    r.read_exact(&mut bytes).map_err(|_| truncated(path))?;
    let mut data = Vec::with_capacity(n as usize);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::UnsupportedFormat(format!(
                "{}: float map contains non-finite samples",
                path.display()
            )));
        }
        data.push(v as f64);
    }
    Ok(ImageField {
        width,
        height,
        channels,
        data,
    })
}

/// Write a `TVF1` float map (samples stored as little-endian f32).
pub fn write_float_map(img: &ImageField, path: &Path) -> Result<()> {
    if img.data.is_empty() {
        return Err(Error::DegenerateInput("refusing to write an empty float map".into()));
    }
    if !img.is_finite() {
        return Err(Error::DegenerateInput(
            "refusing to write non-finite samples to a float map".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FLOAT_MAP_MAGIC)?;
    w.write_all(&(img.width as u32).to_le_bytes())?;
    w.write_all(&(img.height as u32).to_le_bytes())?;
    w.write_all(&(img.channels as u32).to_le_bytes())?;
    for &v in &img.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| truncated(path))?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(path: &Path) -> Error {
    Error::UnsupportedFormat(format!("{}: truncated float map", path.display()))
}
