//! Linear operators of the observation model and their adjoints.
//!
//! The degradation is `g = H f + eta` where `H` is either the identity
//! (denoising) or a circular convolution with a normalized blur kernel
//! (deblurring). Circular boundary conditions make `H` diagonal in the
//! Fourier basis, so both `apply` and `adjoint` run as FFT round trips and
//! the Wiener filter is a pointwise spectral division.
//!
//! Also lives here: the discrete image gradient (forward differences,
//! Neumann boundary) and its exact negative adjoint `div`, plus small-kernel
//! spatial convolution with replicate padding used by the estimation stages.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::ImageField;

// ---------------------------------------------------------------------------
// Blur kernels
// ---------------------------------------------------------------------------

/// A normalized convolution kernel with odd support.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub width: usize,
    pub height: usize,
    /// Row-major taps, sum exactly normalized to 1.
    pub taps: Vec<f64>,
}

impl BlurKernel {
    /// Validate odd support and positive mass, then normalize to unit sum.
    pub fn from_taps(width: usize, height: usize, mut taps: Vec<f64>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel support {width}x{height} must be odd in both dimensions"
            )));
        }
        if taps.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "kernel has {} taps, expected {}",
                taps.len(),
                width * height
            )));
        }
        if !taps.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidParameter("kernel taps must be finite".into()));
        }
        let sum: f64 = taps.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kernel mass {sum} must be positive"
            )));
        }
        for t in taps.iter_mut() {
            *t /= sum;
        }
        Ok(BlurKernel {
            width,
            height,
            taps,
        })
    }

    #[inline]
    pub fn half_width(&self) -> i32 {
        (self.width / 2) as i32
    }

    #[inline]
    pub fn half_height(&self) -> i32 {
        (self.height / 2) as i32
    }

    /// Tap at signed offset from the center; zero outside the support.
    #[inline]
    pub fn tap(&self, dx: i32, dy: i32) -> f64 {
        let x = dx + self.half_width();
        let y = dy + self.half_height();
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            0.0
        } else {
            self.taps[y as usize * self.width + x as usize]
        }
    }
}

/// Isotropic Gaussian kernel on an odd `support x support` grid.
pub fn gaussian_kernel(support: usize, sigma: f64) -> Result<BlurKernel> {
    if support % 2 == 0 || support == 0 {
        return Err(Error::InvalidParameter(format!(
            "gaussian support {support} must be odd"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma {sigma} must be positive"
        )));
    }
    let half = (support / 2) as i32;
    let mut taps = Vec::with_capacity(support * support);
    for dy in -half..=half {
        for dx in -half..=half {
            let r2 = (dx * dx + dy * dy) as f64;
            taps.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    BlurKernel::from_taps(support, support, taps)
}

/// Linear motion blur: an anti-aliased line segment of the given length
/// (in pixels) through the kernel center.
///
/// `angle_deg` is measured from the +x axis toward increasing row index.
/// Taps get weight `max(0, 1 - d)` where `d` is the distance to the
/// segment; the kernel is then trimmed to its minimal odd support and
/// normalized. Length 1 degenerates to the identity tap.
pub fn motion_kernel(length: usize, angle_deg: f64) -> Result<BlurKernel> {
    if length == 0 {
        return Err(Error::InvalidParameter("motion length must be >= 1".into()));
    }
    if !angle_deg.is_finite() {
        return Err(Error::InvalidParameter("motion angle must be finite".into()));
    }
    let half = (length as f64 - 1.0) / 2.0;
    let (dirx, diry) = (
        angle_deg.to_radians().cos(),
        angle_deg.to_radians().sin(),
    );
    // Padded box: segment extent plus one pixel of anti-aliasing margin.
    let hx = (half * dirx.abs()).ceil() as i32 + 1;
    let hy = (half * diry.abs()).ceil() as i32 + 1;
    let (w, h) = ((2 * hx + 1) as usize, (2 * hy + 1) as usize);
    let mut taps = vec![0.0; w * h];
    for dy in -hy..=hy {
        for dx in -hx..=hx {
            let d = dist_to_segment(dx as f64, dy as f64, half * dirx, half * diry);
            let wgt = (1.0 - d).max(0.0);
            taps[(dy + hy) as usize * w + (dx + hx) as usize] = wgt;
        }
    }
    let (w, h, taps) = trim_zero_margins(w, h, taps);
    BlurKernel::from_taps(w, h, taps)
}

/// Distance from point `(px, py)` to the segment from `(-ex, -ey)` to `(ex, ey)`.
fn dist_to_segment(px: f64, py: f64, ex: f64, ey: f64) -> f64 {
    let len2 = ex * ex + ey * ey;
    if len2 == 0.0 {
        return (px * px + py * py).sqrt();
    }
    // projection parameter in [-1, 1] along the segment
    let t = ((px * ex + py * ey) / len2).clamp(-1.0, 1.0);
    let (cx, cy) = (t * ex, t * ey);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Strip symmetric all-zero border rows/columns, keeping odd support.
fn trim_zero_margins(mut w: usize, mut h: usize, mut taps: Vec<f64>) -> (usize, usize, Vec<f64>) {
    let eps = 1e-12;
    loop {
        let col_zero = |taps: &[f64], w: usize, h: usize, x: usize| {
            (0..h).all(|y| taps[y * w + x].abs() < eps)
        };
        if w >= 3 && col_zero(&taps, w, h, 0) && col_zero(&taps, w, h, w - 1) {
            let mut next = Vec::with_capacity((w - 2) * h);
            for y in 0..h {
                next.extend_from_slice(&taps[y * w + 1..y * w + w - 1]);
            }
            taps = next;
            w -= 2;
            continue;
        }
        let row_zero = |taps: &[f64], w: usize, y: usize| {
            taps[y * w..(y + 1) * w].iter().all(|t| t.abs() < eps)
        };
        if h >= 3 && row_zero(&taps, w, 0) && row_zero(&taps, w, h - 1) {
            taps = taps[w..(h - 1) * w].to_vec();
            h -= 2;
            continue;
        }
        return (w, h, taps);
    }
}

// ---------------------------------------------------------------------------
// FFT plumbing
// ---------------------------------------------------------------------------

/// In-place 2-D FFT via row FFTs, transpose, row FFTs, transpose back.
/// The inverse applies the 1/(w*h) normalization.
fn fft_2d(buf: &mut Vec<Complex<f64>>, width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    let col = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    for r in buf.chunks_exact_mut(width) {
        row.process(r);
    }
    let mut t = vec![Complex::new(0.0, 0.0); buf.len()];
    for y in 0..height {
        for x in 0..width {
            t[x * height + y] = buf[y * width + x];
        }
    }
    for r in t.chunks_exact_mut(height) {
        col.process(r);
    }
    for y in 0..height {
        for x in 0..width {
            buf[y * width + x] = t[x * height + y];
        }
    }
    if inverse {
        let scale = 1.0 / (width * height) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Kernel spectrum on a `width x height` grid: taps embedded at their signed
/// offsets with circular wraparound, then transformed.
fn kernel_spectrum(kernel: &BlurKernel, width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut e = vec![Complex::new(0.0, 0.0); width * height];
    let (hw, hh) = (kernel.half_width(), kernel.half_height());
    for ky in 0..kernel.height as i32 {
        for kx in 0..kernel.width as i32 {
            let tap = kernel.taps[(ky * kernel.width as i32 + kx) as usize];
            let x = (kx - hw).rem_euclid(width as i32) as usize;
            let y = (ky - hh).rem_euclid(height as i32) as usize;
            e[y * width + x] += Complex::new(tap, 0.0);
        }
    }
    fft_2d(&mut e, width, height, false);
    e
}

fn plane_to_complex(plane: &[f64]) -> Vec<Complex<f64>> {
    plane.iter().map(|&v| Complex::new(v, 0.0)).collect()
}

// ---------------------------------------------------------------------------
// Forward model
// ---------------------------------------------------------------------------

/// The observation operator `H`.
#[derive(Debug, Clone)]
pub enum ForwardModel {
    /// Denoising: `H = I`.
    Identity,
    /// Deblurring: circular convolution with a normalized kernel.
    Convolution(BlurKernel),
}

impl ForwardModel {
    pub fn is_identity(&self) -> bool {
        matches!(self, ForwardModel::Identity)
    }

    pub fn kernel(&self) -> Option<&BlurKernel> {
        match self {
            ForwardModel::Identity => None,
            ForwardModel::Convolution(k) => Some(k),
        }
    }

    /// `H f`.
    pub fn apply(&self, f: &ImageField) -> ImageField {
        match self {
            ForwardModel::Identity => f.clone(),
            ForwardModel::Convolution(k) => convolve_spectral(f, k, false),
        }
    }

    /// `H^T f` (correlation for the convolution case).
    pub fn adjoint(&self, f: &ImageField) -> ImageField {
        match self {
            ForwardModel::Identity => f.clone(),
            ForwardModel::Convolution(k) => convolve_spectral(f, k, true),
        }
    }
}

fn convolve_spectral(f: &ImageField, kernel: &BlurKernel, adjoint: bool) -> ImageField {
    let (w, h) = (f.width, f.height);
    let spec = kernel_spectrum(kernel, w, h);
    let mut out = f.zeros_like();
    for c in 0..f.channels {
        let mut buf = plane_to_complex(f.plane(c));
        fft_2d(&mut buf, w, h, false);
        for (v, k) in buf.iter_mut().zip(&spec) {
            *v *= if adjoint { k.conj() } else { *k };
        }
        fft_2d(&mut buf, w, h, true);
        for (o, v) in out.plane_mut(c).iter_mut().zip(&buf) {
            *o = v.re;
        }
    }
    out
}

/// Wiener deconvolution with noise-to-signal ratio `nsr`:
/// `F = conj(K) G / (|K|^2 + nsr)` per frequency and channel.
///
/// Frequencies where the denominator vanishes (zero kernel spectrum with
/// `nsr = 0`) are set to zero rather than divided.
pub fn wiener_deblur(g: &ImageField, kernel: &BlurKernel, nsr: f64) -> Result<ImageField> {
    if !(nsr >= 0.0 && nsr.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "wiener nsr {nsr} must be finite and >= 0"
        )));
    }
    let (w, h) = (g.width, g.height);
    let spec = kernel_spectrum(kernel, w, h);
    let mut out = g.zeros_like();
    for c in 0..g.channels {
        let mut buf = plane_to_complex(g.plane(c));
        fft_2d(&mut buf, w, h, false);
        for (v, k) in buf.iter_mut().zip(&spec) {
            let denom = k.norm_sqr() + nsr;
            *v = if denom > 0.0 {
                k.conj() * *v / denom
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft_2d(&mut buf, w, h, true);
        for (o, v) in out.plane_mut(c).iter_mut().zip(&buf) {
            *o = v.re;
        }
    }
    Ok(out)
}

/// Noise standard deviation realizing a target blurred signal-to-noise
/// ratio: `sigma = sqrt(var(H f) / 10^(bsnr/10))`, variance taken over all
/// samples of the blurred image.
pub fn bsnr_sigma(hf: &ImageField, bsnr_db: f64) -> Result<f64> {
    if !bsnr_db.is_finite() {
        return Err(Error::InvalidParameter("bsnr must be finite".into()));
    }
    let n = hf.data.len() as f64;
    let mean = hf.data.iter().sum::<f64>() / n;
    let var = hf.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < 1e-30 {
        return Err(Error::DegenerateInput(
            "blurred image is constant; BSNR does not determine a noise level".into(),
        ));
    }
    Ok((var / 10f64.powf(bsnr_db / 10.0)).sqrt())
}

// ---------------------------------------------------------------------------
// Discrete gradient and divergence
// ---------------------------------------------------------------------------

/// Per-channel forward-difference gradient planes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `d/dx` planes, same layout as [`ImageField::data`].
    pub dx: Vec<f64>,
    /// `d/dy` planes.
    pub dy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        GradientField {
            width,
            height,
            channels,
            dx: vec![0.0; width * height * channels],
            dy: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

/// Forward differences with Neumann boundary (zero at the last row/column).
pub fn grad(f: &ImageField) -> GradientField {
    let (w, h) = (f.width, f.height);
    let mut out = GradientField::zeros(w, h, f.channels);
    for c in 0..f.channels {
        let base = c * w * h;
        let plane = f.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    out.dx[base + i] = plane[i + 1] - plane[i];
                }
                if y + 1 < h {
                    out.dy[base + i] = plane[i + w] - plane[i];
                }
            }
        }
    }
    out
}

/// Discrete divergence, defined so that `div = -grad^T` exactly:
/// `<grad f, V> = -<f, div V>` for all `f`, `V`.
pub fn div(v: &GradientField) -> ImageField {
    let (w, h) = (v.width, v.height);
    let mut out = ImageField::new(w, h, v.channels);
    for c in 0..v.channels {
        let base = c * w * h;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut acc = 0.0;
                if x + 1 < w {
                    acc += v.dx[base + i];
                }
                if x >= 1 {
                    acc -= v.dx[base + i - 1];
                }
                if y + 1 < h {
                    acc += v.dy[base + i];
                }
                if y >= 1 {
                    acc -= v.dy[base + i - w];
                }
                out.data[base + i] = acc;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Spatial convolution with replicate padding
// ---------------------------------------------------------------------------

/// Convolve one plane with a small kernel, clamping reads at the border
/// (replicate padding). Used by the smoothing stages of parameter
/// estimation, where circular wraparound would bleed content across edges.
pub fn convolve_replicate(plane: &[f64], width: usize, height: usize, kernel: &BlurKernel) -> Vec<f64> {
    assert_eq!(plane.len(), width * height, "plane length mismatch");
    let (hw, hh) = (kernel.half_width(), kernel.half_height());
    let mut out = vec![0.0; plane.len()];
    for y in 0..height as i32 {
        for x in 0..width as i32 {
            let mut acc = 0.0;
            for dy in -hh..=hh {
                for dx in -hw..=hw {
                    let sx = (x - dx).clamp(0, width as i32 - 1) as usize;
                    let sy = (y - dy).clamp(0, height as i32 - 1) as usize;
                    acc += kernel.tap(dx, dy) * plane[sy * width + sx];
                }
            }
            out[y as usize * width + x as usize] = acc;
        }
    }
    out
}
