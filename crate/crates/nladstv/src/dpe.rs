//! Directional parameter estimation (DPE).
//!
//! Estimates, from the degraded observation itself, the per-pixel dominant
//! orientation `theta` and anisotropy scale `alpha_minor` that steer the
//! direction-guided regularizer:
//!
//! 1. deblurring observations are first Wiener-filtered (the estimation
//!    stages want approximately sharp structure);
//! 2. a local structure tensor (Gaussian window) gives rough orientations
//!    `theta0` and a linearity map `c0`;
//! 3. pixels are binned into 12 orientation classes at 15 degree spacing,
//!    each class mask morphologically closed (5-pixel line, then 3x3 square);
//! 4. an anisotropic Gaussian kernel bank smooths the image — and `c0` —
//!    along each class orientation, responses averaged where masks overlap;
//! 5. a nonlocal structure tensor of the orientation-smoothed image yields
//!    the final `theta` and a second linearity map; the two linearity maps
//!    are averaged and mapped affinely onto `[1, alpha_plus]` (strong
//!    linearity -> alpha_minor near 1, i.e. maximal anisotropy).
//!
//! Every stage is deterministic; the pipeline never looks at the clean image.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{luminance, read_float_map, write_float_map, ImageField};
use crate::jacobian::DirectionField;
use crate::linops::{
    convolve_replicate, gaussian_kernel, wiener_deblur, BlurKernel, ForwardModel, GradientField,
};
use crate::nlweights::{build_weight_graph, PatchConfig};

/// Number of orientation classes (15 degree spacing over the half-circle).
pub const ORIENTATION_BINS: usize = 12;

/// Half-width of one orientation bin, radians (7.5 degrees).
pub const BIN_HALF_WIDTH: f64 = std::f64::consts::PI / 24.0;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Tunables of the estimation pipeline. [`Default`] reproduces the
/// experiment settings; `alpha_plus` is the one knob callers usually set.
#[derive(Debug, Clone, PartialEq)]
pub struct DpeConfig {
    /// Penalty across the dominant direction (> 1).
    pub alpha_plus: f64,
    /// Local structure tensor window support (odd).
    pub st_support: usize,
    /// Local structure tensor window std.
    pub st_sigma: f64,
    /// Patch/window/neighbor settings of the nonlocal structure tensor.
    pub patch: PatchConfig,
    /// Anisotropic kernel scale.
    pub agk_sigma: f64,
    /// Anisotropic kernel elongation factor (>= 1).
    pub agk_psi: f64,
    /// Anisotropic kernel support (odd); see [`agk_support_for`].
    pub agk_support: usize,
    /// Noise-to-signal ratio of the Wiener pre-deblur.
    pub wiener_nsr: f64,
}

impl Default for DpeConfig {
    fn default() -> Self {
        DpeConfig {
            alpha_plus: 4.0,
            st_support: 9,
            st_sigma: 1.5,
            patch: PatchConfig::dpe_default(),
            agk_sigma: 0.75,
            agk_psi: 4.0,
            agk_support: agk_support_for(0.75, 4.0),
            wiener_nsr: 1e-2,
        }
    }
}

impl DpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_plus > 1.0 && self.alpha_plus.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha_plus {} must be > 1",
                self.alpha_plus
            )));
        }
        if self.st_support % 2 == 0 || self.st_support == 0 {
            return Err(Error::InvalidParameter(format!(
                "structure tensor support {} must be odd",
                self.st_support
            )));
        }
        if !(self.st_sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "structure tensor sigma {} must be positive",
                self.st_sigma
            )));
        }
        self.patch.validate()?;
        if !(self.agk_sigma > 0.0 && self.agk_psi >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "anisotropic kernel wants sigma > 0 and psi >= 1, got sigma {} psi {}",
                self.agk_sigma, self.agk_psi
            )));
        }
        if self.agk_support % 2 == 0 || self.agk_support == 0 {
            return Err(Error::InvalidParameter(format!(
                "anisotropic kernel support {} must be odd",
                self.agk_support
            )));
        }
        if !(self.wiener_nsr >= 0.0 && self.wiener_nsr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wiener nsr {} must be >= 0",
                self.wiener_nsr
            )));
        }
        Ok(())
    }
}

/// Smallest odd support that keeps ~99.7% of an elongated kernel's mass:
/// `6 * sigma * psi + 1`, rounded up to odd (19 for sigma 0.75, psi 4).
pub fn agk_support_for(sigma: f64, psi: f64) -> usize {
    let needed = 6.0 * sigma * psi + 1.0;
    let s = needed.ceil() as usize;
    if s % 2 == 1 {
        s
    } else {
        s + 1
    }
}

// ---------------------------------------------------------------------------
// Structure tensors
// ---------------------------------------------------------------------------

/// Per-pixel symmetric 2x2 tensors (gradient second moments).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub width: usize,
    pub height: usize,
    pub t11: Vec<f64>,
    pub t12: Vec<f64>,
    pub t22: Vec<f64>,
}

impl TensorField {
    fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        TensorField {
            width,
            height,
            t11: vec![0.0; n],
            t12: vec![0.0; n],
            t22: vec![0.0; n],
        }
    }

    /// Positive semidefiniteness up to round-off.
    pub fn validate_psd(&self) -> Result<()> {
        for i in 0..self.t11.len() {
            let (a, b, c) = (self.t11[i], self.t12[i], self.t22[i]);
            if a < -1e-12 || c < -1e-12 || a * c - b * b < -1e-12 * (1.0 + a * c) {
                return Err(Error::DegenerateInput(format!(
                    "tensor at {i} is not PSD: [{a}, {b}; {b}, {c}]"
                )));
            }
        }
        Ok(())
    }
}

/// Gradient used by the estimation tensors: central differences in the
/// interior, one-sided at the borders.
///
/// The restoration operator keeps forward differences (its adjoint is the
/// negative divergence), but orientation analysis needs a phase-symmetric
/// stencil: forward differences shift `d/dx` and `d/dy` by half a pixel in
/// different directions, which visibly rotates the discrete gradient of a
/// periodic texture depending on the local phase. Central differences keep
/// the direction constant along a stripe.
pub fn analysis_gradient(gray: &ImageField) -> GradientField {
    let (w, h) = (gray.width, gray.height);
    let mut out = GradientField::zeros(w, h, gray.channels);
    for c in 0..gray.channels {
        let base = c * w * h;
        let plane = gray.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                out.dx[base + i] = (plane[y * w + xr] - plane[y * w + xl]) / (xr - xl).max(1) as f64;
                out.dy[base + i] = (plane[yd * w + x] - plane[yu * w + x]) / (yd - yu).max(1) as f64;
            }
        }
    }
    out
}

/// Local structure tensor: gradient outer products smoothed by a Gaussian
/// window (replicate boundary).
pub fn structure_tensor(gray: &ImageField, support: usize, sigma: f64) -> Result<TensorField> {
    if gray.channels != 1 {
        return Err(Error::InvalidParameter(format!(
            "structure tensor wants a single-channel image, got {}",
            gray.channels
        )));
    }
    let window = gaussian_kernel(support, sigma)?;
    let (w, h) = (gray.width, gray.height);
    let g = analysis_gradient(gray);
    let n = w * h;
    let mut xx = vec![0.0; n];
    let mut xy = vec![0.0; n];
    let mut yy = vec![0.0; n];
    for i in 0..n {
        xx[i] = g.dx[i] * g.dx[i];
        xy[i] = g.dx[i] * g.dy[i];
        yy[i] = g.dy[i] * g.dy[i];
    }
    Ok(TensorField {
        width: w,
        height: h,
        t11: convolve_replicate(&xx, w, h, &window),
        t12: convolve_replicate(&xy, w, h, &window),
        t22: convolve_replicate(&yy, w, h, &window),
    })
}

/// Nonlocal structure tensor: per pixel, the similarity-weighted sum of
/// gradient outer products over the patch-similarity graph of `gray`.
pub fn nonlocal_structure_tensor(gray: &ImageField, cfg: &PatchConfig) -> Result<TensorField> {
    if gray.channels != 1 {
        return Err(Error::InvalidParameter(format!(
            "nonlocal structure tensor wants a single-channel image, got {}",
            gray.channels
        )));
    }
    let graph = build_weight_graph(gray, cfg)?;
    let (w, h) = (gray.width, gray.height);
    let g = analysis_gradient(gray);
    let mut t = TensorField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let (offs, wgts) = graph.entries(pix);
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (&(dx, dy), &wgt) in offs.iter().zip(wgts) {
                let j = (y as i32 + dy) as usize * w + (x as i32 + dx) as usize;
                let (gx, gy) = (g.dx[j], g.dy[j]);
                a += wgt * gx * gx;
                b += wgt * gx * gy;
                c += wgt * gy * gy;
            }
            t.t11[pix] = a;
            t.t12[pix] = b;
            t.t22[pix] = c;
        }
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Eigenanalysis
// ---------------------------------------------------------------------------

/// Eigenvalues and dominant-direction angles of a tensor field.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenMaps {
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
    /// Angle of the minor eigenvector (the direction of least variation,
    /// i.e. along edges), folded into `[0, pi)`.
    pub theta: Vec<f64>,
}

/// Normalized eigenvalue contrast `(l+ - l-) / l+`, one value per pixel in
/// `[0, 1]`; zero where the tensor (numerically) vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityMap {
    pub c: Vec<f64>,
}

/// Closed-form eigendecomposition of every tensor.
pub fn eigendecompose(t: &TensorField) -> (EigenMaps, LinearityMap) {
    let n = t.t11.len();
    let mut lambda_plus = vec![0.0; n];
    let mut lambda_minus = vec![0.0; n];
    let mut theta = vec![0.0; n];
    let mut c = vec![0.0; n];
    for i in 0..n {
        let (a, b, d) = (t.t11[i], t.t12[i], t.t22[i]);
        let mean = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let lp = mean + disc;
        let lm = (mean - disc).max(0.0);
        lambda_plus[i] = lp;
        lambda_minus[i] = lm;
        if lp > 1e-12 {
            // major eigenvector angle, then rotate a quarter turn to the
            // minor (edge-aligned) direction and fold into [0, pi)
            let mut th = 0.5 * (2.0 * b).atan2(a - d) + std::f64::consts::FRAC_PI_2;
            if th >= std::f64::consts::PI {
                th -= std::f64::consts::PI;
            }
            theta[i] = th;
            c[i] = ((lp - lm) / lp).clamp(0.0, 1.0);
        }
        // else: degenerate tensor, keep theta = 0, c = 0 by convention
    }
    (
        EigenMaps {
            lambda_plus,
            lambda_minus,
            theta,
        },
        LinearityMap { c },
    )
}

// ---------------------------------------------------------------------------
// Orientation masks and morphology
// ---------------------------------------------------------------------------

/// One binary mask per orientation class, after morphological closing.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMaskSet {
    pub width: usize,
    pub height: usize,
    /// `ORIENTATION_BINS` masks in class order (0, 15, 30, ... degrees).
    pub masks: Vec<Vec<bool>>,
}

impl OrientationMaskSet {
    #[inline]
    pub fn contains(&self, bin: usize, pix: usize) -> bool {
        self.masks[bin][pix]
    }
}

/// Class center orientation in radians.
pub fn main_orientation(bin: usize) -> f64 {
    bin as f64 * std::f64::consts::PI / ORIENTATION_BINS as f64
}

/// Orientation class of an angle in `[0, pi)`: the nearest class center
/// modulo 180 degrees, lower edge inclusive.
pub fn bin_of_theta(theta: f64) -> usize {
    let step = std::f64::consts::PI / ORIENTATION_BINS as f64;
    let shifted = (theta + 0.5 * step).rem_euclid(std::f64::consts::PI);
    ((shifted / step) as usize).min(ORIENTATION_BINS - 1)
}

/// Bin each pixel by its rough orientation, then close every class mask
/// with a 5-pixel line structuring element at the class orientation
/// followed by a 3x3 square. Closing only adds pixels, so the union of the
/// returned masks covers the image.
pub fn orientation_masks(theta0: &[f64], width: usize, height: usize) -> OrientationMaskSet {
    assert_eq!(theta0.len(), width * height, "theta map length mismatch");
    let mut masks = vec![vec![false; width * height]; ORIENTATION_BINS];
    for (pix, &th) in theta0.iter().enumerate() {
        masks[bin_of_theta(th)][pix] = true;
    }
    let square: Vec<(i32, i32)> = (-1..=1)
        .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
        .collect();
    let closed: Vec<Vec<bool>> = masks
        .par_iter()
        .enumerate()
        .map(|(m, mask)| {
            let line = line_se(main_orientation(m), 5);
            let once = close(mask, width, height, &line);
            close(&once, width, height, &square)
        })
        .collect();
    OrientationMaskSet {
        width,
        height,
        masks: closed,
    }
}

/// Offsets of a Bresenham-style line of `len` pixels through the origin at
/// the given orientation.
fn line_se(angle: f64, len: usize) -> Vec<(i32, i32)> {
    let half = (len / 2) as i32;
    let (c, s) = (angle.cos(), angle.sin());
    (-half..=half)
        .map(|t| {
            if c.abs() >= s.abs() {
                (t, ((t as f64) * s / c).round() as i32)
            } else {
                (((t as f64) * c / s).round() as i32, t)
            }
        })
        .collect()
}

/// Dilation: set wherever any structuring-element translate hits the mask.
fn dilate(mask: &[bool], width: usize, height: usize, se: &[(i32, i32)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height as i32 {
        for x in 0..width as i32 {
            if !mask[y as usize * width + x as usize] {
                continue;
            }
            for &(dx, dy) in se {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < width as i32 && ny < height as i32 {
                    out[ny as usize * width + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// Erosion: keep pixels whose whole (in-bounds) structuring element is set.
/// Out-of-image positions count as foreground so closing stays extensive at
/// the border.
fn erode(mask: &[bool], width: usize, height: usize, se: &[(i32, i32)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height as i32 {
        for x in 0..width as i32 {
            let ok = se.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as i32 || ny >= height as i32 {
                    true
                } else {
                    mask[ny as usize * width + nx as usize]
                }
            });
            out[y as usize * width + x as usize] = ok;
        }
    }
    out
}

fn close(mask: &[bool], width: usize, height: usize, se: &[(i32, i32)]) -> Vec<bool> {
    erode(&dilate(mask, width, height, se), width, height, se)
}

// ---------------------------------------------------------------------------
// Anisotropic Gaussian kernels
// ---------------------------------------------------------------------------

/// Anisotropic Gaussian kernel sampled on an odd `support x support` grid
/// and normalized to unit sum.
///
/// The quadratic form is `x^T R(beta) diag(psi^2, 1/psi^2) R(beta)^T x`
/// over `2 sigma^2`: variance `(sigma/psi)^2` along `beta` and
/// `(sigma*psi)^2` across it, so the mass elongates along `beta + 90deg`.
pub fn agk_kernel(sigma: f64, psi: f64, beta: f64, support: usize) -> Result<BlurKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "agk sigma {sigma} must be positive"
        )));
    }
    if !(psi >= 1.0 && psi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "agk psi {psi} must be >= 1"
        )));
    }
    if support % 2 == 0 || support == 0 {
        return Err(Error::InvalidParameter(format!(
            "agk support {support} must be odd"
        )));
    }
    let half = (support / 2) as i32;
    let (cb, sb) = (beta.cos(), beta.sin());
    let inv_2s2 = 1.0 / (2.0 * sigma * sigma);
    let (p2, ip2) = (psi * psi, 1.0 / (psi * psi));
    let mut taps = Vec::with_capacity(support * support);
    for dy in -half..=half {
        for dx in -half..=half {
            // coordinates in the frame rotated by beta
            let u = cb * dx as f64 + sb * dy as f64;
            let v = -sb * dx as f64 + cb * dy as f64;
            taps.push((-(p2 * u * u + ip2 * v * v) * inv_2s2).exp());
        }
    }
    BlurKernel::from_taps(support, support, taps)
}

/// Orientation-adaptive smoothing: convolve with one anisotropic kernel per
/// orientation class (elongated along the class orientation), then blend —
/// each pixel averages the responses of the closed masks containing it;
/// pixels in no mask (impossible after closing, kept for robustness) fall
/// back to an isotropic response.
pub fn agk_filter(
    img: &ImageField,
    masks: &OrientationMaskSet,
    sigma: f64,
    psi: f64,
    support: usize,
) -> Result<ImageField> {
    if img.channels != 1 {
        return Err(Error::InvalidParameter(format!(
            "agk filter wants a single-channel image, got {}",
            img.channels
        )));
    }
    if img.width != masks.width || img.height != masks.height {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs masks {}x{}",
            img.width, img.height, masks.width, masks.height
        )));
    }
    let (w, h) = (img.width, img.height);
    let plane = img.plane(0);
    // the quadratic form decays fastest along its beta argument, so hand it
    // the class perpendicular to elongate along the class orientation
    let responses: Vec<Result<Vec<f64>>> = (0..ORIENTATION_BINS)
        .into_par_iter()
        .map(|m| {
            let beta = main_orientation(m) + std::f64::consts::FRAC_PI_2;
            let kernel = agk_kernel(sigma, psi, beta, support)?;
            Ok(convolve_replicate(plane, w, h, &kernel))
        })
        .collect();
    let mut bank = Vec::with_capacity(ORIENTATION_BINS);
    for r in responses {
        bank.push(r?);
    }
    let iso = convolve_replicate(
        plane,
        w,
        h,
        &gaussian_kernel(agk_support_for(sigma, 1.0), sigma)?,
    );

    let mut out = ImageField::new(w, h, 1);
    for pix in 0..w * h {
        let mut acc = 0.0;
        let mut hits = 0usize;
        for m in 0..ORIENTATION_BINS {
            if masks.masks[m][pix] {
                acc += bank[m][pix];
                hits += 1;
            }
        }
        out.data[pix] = if hits > 0 {
            acc / hits as f64
        } else {
            iso[pix]
        };
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Estimate directional parameters with experiment defaults; see
/// [`estimate_parameters_with`] for the tunable variant.
pub fn estimate_parameters(
    g: &ImageField,
    alpha_plus: f64,
    model: &ForwardModel,
) -> Result<DirectionField> {
    let cfg = DpeConfig {
        alpha_plus,
        ..DpeConfig::default()
    };
    estimate_parameters_with(g, model, &cfg)
}

/// Run the full estimation pipeline on a degraded observation.
pub fn estimate_parameters_with(
    g: &ImageField,
    model: &ForwardModel,
    cfg: &DpeConfig,
) -> Result<DirectionField> {
    cfg.validate()?;

    // (a) approximate inversion of a known blur before analyzing structure
    let working = match model {
        ForwardModel::Identity => g.clone(),
        ForwardModel::Convolution(kernel) => wiener_deblur(g, kernel, cfg.wiener_nsr)?,
    };
    // (b) orientation analysis runs on luminance
    let gray = luminance(&working)?;

    // (c) rough orientations and linearity from the local structure tensor
    let t0 = structure_tensor(&gray, cfg.st_support, cfg.st_sigma)?;
    let (eigen0, lin0) = eigendecompose(&t0);

    // (d) orientation class masks
    let masks = orientation_masks(&eigen0.theta, gray.width, gray.height);

    // (e) smooth the image and the linearity map along class orientations
    let smoothed = agk_filter(&gray, &masks, cfg.agk_sigma, cfg.agk_psi, cfg.agk_support)?;
    let c0_img = ImageField {
        width: gray.width,
        height: gray.height,
        channels: 1,
        data: lin0.c,
    };
    let c_agk = agk_filter(&c0_img, &masks, cfg.agk_sigma, cfg.agk_psi, cfg.agk_support)?;

    // (f) final orientations from the nonlocal structure tensor of the
    //     orientation-smoothed image
    let t_nl = nonlocal_structure_tensor(&smoothed, &cfg.patch)?;
    let (eigen_nl, lin_nl) = eigendecompose(&t_nl);

    // (g) combined linearity
    let n = gray.width * gray.height;
    let mut c = vec![0.0; n];
    for i in 0..n {
        c[i] = (0.5 * (c_agk.data[i] + lin_nl.c[i])).clamp(0.0, 1.0);
    }

    // (h) affine map: strongest linearity -> alpha_minor 1 (fully
    //     anisotropic), weakest -> alpha_plus (isotropic)
    let cmax = c.iter().cloned().fold(f64::MIN, f64::max);
    let cmin = c.iter().cloned().fold(f64::MAX, f64::min);
    let alpha_minor = if cmax - cmin <= 1e-12 {
        vec![cfg.alpha_plus; n]
    } else {
        let slope = (cfg.alpha_plus - 1.0) / (cmax - cmin);
        c.iter().map(|&ci| slope * (cmax - ci) + 1.0).collect()
    };

    let dirs = DirectionField {
        width: gray.width,
        height: gray.height,
        theta: eigen_nl.theta,
        alpha_minor,
        alpha_plus: cfg.alpha_plus,
    };
    dirs.validate()?;
    Ok(dirs)
}

// ---------------------------------------------------------------------------
// Direction field files
// ---------------------------------------------------------------------------

/// Write a direction field as `<prefix>.theta.tvf`, `<prefix>.alpha.tvf`
/// and a `<prefix>.meta` text header carrying `alpha_plus`.
pub fn save_directions(dirs: &DirectionField, prefix: &Path) -> Result<()> {
    let (w, h) = (dirs.width, dirs.height);
    let theta = ImageField::from_data(w, h, 1, dirs.theta.clone())?;
    let alpha = ImageField::from_data(w, h, 1, dirs.alpha_minor.clone())?;
    write_float_map(&theta, &with_suffix(prefix, ".theta.tvf"))?;
    write_float_map(&alpha, &with_suffix(prefix, ".alpha.tvf"))?;
    let mut meta = BufWriter::new(File::create(with_suffix(prefix, ".meta"))?);
    writeln!(meta, "alpha_plus {}", dirs.alpha_plus)?;
    writeln!(meta, "width {w}")?;
    writeln!(meta, "height {h}")?;
    meta.flush()?;
    Ok(())
}

/// Read a direction field written by [`save_directions`]. Values are
/// clamped back into `[1, alpha_plus]` to absorb f32 re-quantization.
pub fn load_directions(prefix: &Path) -> Result<DirectionField> {
    let theta = read_float_map(&with_suffix(prefix, ".theta.tvf"))?;
    let alpha = read_float_map(&with_suffix(prefix, ".alpha.tvf"))?;
    let meta_path = with_suffix(prefix, ".meta");
    let mut text = String::new();
    File::open(&meta_path)?.read_to_string(&mut text)?;
    let mut alpha_plus = None;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if it.next() == Some("alpha_plus") {
            alpha_plus = it.next().and_then(|v| v.parse::<f64>().ok());
        }
    }
    let alpha_plus = alpha_plus.ok_or_else(|| {
        Error::UnsupportedFormat(format!(
            "{}: missing alpha_plus entry",
            meta_path.display()
        ))
    })?;
    if theta.width != alpha.width || theta.height != alpha.height {
        return Err(Error::ShapeMismatch(format!(
            "theta map {}x{} vs alpha map {}x{}",
            theta.width, theta.height, alpha.width, alpha.height
        )));
    }
    let dirs = DirectionField {
        width: theta.width,
        height: theta.height,
        theta: theta.data,
        alpha_minor: alpha
            .data
            .into_iter()
            .map(|a| a.clamp(1.0, alpha_plus))
            .collect(),
        alpha_plus,
    };
    dirs.validate()?;
    Ok(dirs)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}
