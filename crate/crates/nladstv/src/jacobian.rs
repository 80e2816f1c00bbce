//! The (direction-guided) nonlocal Jacobian operator and Schatten norms.
//!
//! For pixel `i` with graph neighbors `j_1 .. j_L` the operator stacks one
//! scaled gradient per neighbor and channel into a `2 x (C*L)` block:
//!
//! ```text
//!   column(l, c) = sqrt(w(i, j_l)) * P(j_l) * grad(f_c)(j_l)
//! ```
//!
//! where `P(j) = diag(alpha_plus, alpha_minor(j)) * R(-theta(j))` rotates the
//! gradient into the local dominant orientation and stretches the two
//! components anisotropically. Omitting `P` (the undirected mode) gives the
//! plain nonlocal structure-tensor Jacobian; feeding a fixed Gaussian window
//! graph instead of a learned one gives the local (structure-tensor TV)
//! family. The regularizer is the sum over pixels of a Schatten norm of the
//! block — the `l1` norm of per-pixel singular value pairs for `p = 1`.
//!
//! The adjoint is the mechanical transpose: scatter each block column back
//! to its neighbor with `P(j)^T`, accumulate into a per-channel vector
//! field, and apply the transposed gradient (`-div`).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageField;
use crate::linops::{div, grad};
use crate::nlweights::WeightGraph;

// ---------------------------------------------------------------------------
// Direction field
// ---------------------------------------------------------------------------

/// Per-pixel dominant orientation and anisotropic scaling.
///
/// `theta` is the orientation of the dominant local direction (radians,
/// wrapped to (-pi/2, pi/2]). Gradients are penalized by `alpha_plus`
/// across that direction and by `alpha_minor` (between 1 and `alpha_plus`,
/// smaller = more anisotropy) along it.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    pub width: usize,
    pub height: usize,
    pub theta: Vec<f64>,
    pub alpha_minor: Vec<f64>,
    pub alpha_plus: f64,
}

impl DirectionField {
    /// Spatially constant field, handy for tests and degenerations.
    pub fn uniform(
        width: usize,
        height: usize,
        theta: f64,
        alpha_minor: f64,
        alpha_plus: f64,
    ) -> Self {
        DirectionField {
            width,
            height,
            theta: vec![theta; width * height],
            alpha_minor: vec![alpha_minor; width * height],
            alpha_plus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.theta.len() != n || self.alpha_minor.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "direction field stores {} angles / {} scales for {} pixels",
                self.theta.len(),
                self.alpha_minor.len(),
                n
            )));
        }
        if !(self.alpha_plus >= 1.0 && self.alpha_plus.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha_plus {} must be >= 1",
                self.alpha_plus
            )));
        }
        for (k, (&t, &a)) in self.theta.iter().zip(&self.alpha_minor).enumerate() {
            if !t.is_finite() {
                return Err(Error::DegenerateInput(format!("theta[{k}] is not finite")));
            }
            if !(a >= 1.0 - 1e-12 && a <= self.alpha_plus + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "alpha_minor[{k}] = {a} outside [1, {}]",
                    self.alpha_plus
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Regularizer mode
// ---------------------------------------------------------------------------

/// Which Jacobian the regularizer uses.
///
/// The local structure-tensor variants are the same modes over a
/// [`crate::nlweights::gaussian_weight_graph`] instead of a learned graph.
#[derive(Debug, Clone)]
pub enum RegularizerMode {
    /// Undirected: plain weighted neighbor gradients.
    Nlstv { graph: WeightGraph },
    /// Direction-guided: neighbor gradients rotated and anisotropically
    /// scaled by a [`DirectionField`].
    Nladstv {
        graph: WeightGraph,
        dirs: DirectionField,
    },
}

impl RegularizerMode {
    pub fn graph(&self) -> &WeightGraph {
        match self {
            RegularizerMode::Nlstv { graph } => graph,
            RegularizerMode::Nladstv { graph, .. } => graph,
        }
    }

    pub fn dirs(&self) -> Option<&DirectionField> {
        match self {
            RegularizerMode::Nlstv { .. } => None,
            RegularizerMode::Nladstv { dirs, .. } => Some(dirs),
        }
    }

    fn check_image(&self, f: &ImageField) -> Result<()> {
        let g = self.graph();
        if f.width != g.width || f.height != g.height {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} vs graph {}x{}",
                f.width, f.height, g.width, g.height
            )));
        }
        if let Some(d) = self.dirs() {
            if d.width != g.width || d.height != g.height {
                return Err(Error::ShapeMismatch(format!(
                    "direction field {}x{} vs graph {}x{}",
                    d.width, d.height, g.width, g.height
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Jacobian field
// ---------------------------------------------------------------------------

/// Per-pixel `2 x (channels * neighbors)` blocks, stored row-major per pixel:
/// `data[pix * 2*C*L + row * C*L + c * L + l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub neighbors: usize,
    pub data: Vec<f64>,
}

impl JacobianField {
    pub fn zeros(width: usize, height: usize, channels: usize, neighbors: usize) -> Self {
        JacobianField {
            width,
            height,
            channels,
            neighbors,
            data: vec![0.0; width * height * 2 * channels * neighbors],
        }
    }

    /// Columns per block (`channels * neighbors`).
    #[inline]
    pub fn block_cols(&self) -> usize {
        self.channels * self.neighbors
    }

    /// The `2 x (C*L)` block of one pixel, row-major.
    #[inline]
    pub fn block(&self, pix: usize) -> &[f64] {
        let n = 2 * self.block_cols();
        &self.data[pix * n..(pix + 1) * n]
    }

    #[inline]
    pub fn block_mut(&mut self, pix: usize) -> &mut [f64] {
        let n = 2 * self.block_cols();
        &mut self.data[pix * n..(pix + 1) * n]
    }

    pub fn same_shape(&self, other: &JacobianField) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
            && self.neighbors == other.neighbors
    }

    pub fn dot(&self, other: &JacobianField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(&self, other: &JacobianField) -> JacobianField {
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o += b;
        }
        out
    }

    pub fn sub(&self, other: &JacobianField) -> JacobianField {
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        out
    }

    pub fn axpy(&mut self, a: f64, x: &JacobianField) {
        for (o, b) in self.data.iter_mut().zip(&x.data) {
            *o += a * b;
        }
    }

    pub fn max_abs_diff(&self, other: &JacobianField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Forward and adjoint operator
// ---------------------------------------------------------------------------

/// Cos/sin/alpha lookup tables for a direction field (reused by the prox
/// solver, which applies the operator many times per restore).
fn direction_tables(dirs: &DirectionField) -> (Vec<f64>, Vec<f64>) {
    let cos: Vec<f64> = dirs.theta.iter().map(|t| t.cos()).collect();
    let sin: Vec<f64> = dirs.theta.iter().map(|t| t.sin()).collect();
    (cos, sin)
}

/// Apply the (direction-guided) nonlocal Jacobian to an image.
pub fn apply_jacobian(f: &ImageField, mode: &RegularizerMode) -> Result<JacobianField> {
    mode.check_image(f)?;
    let graph = mode.graph();
    let (w, h) = (f.width, f.height);
    let channels = f.channels;
    let l = graph.neighbors;
    let g = grad(f);
    let mut out = JacobianField::zeros(w, h, channels, l);
    let cols = out.block_cols();
    let block_len = 2 * cols;

    let tables = mode.dirs().map(direction_tables);
    let dirs = mode.dirs();

    out.data
        .par_chunks_mut(w * block_len)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let pix = y * w + x;
                let (offs, wgts) = graph.entries(pix);
                let block = &mut row[x * block_len..(x + 1) * block_len];
                for (slot, (&(dx, dy), &wgt)) in offs.iter().zip(wgts).enumerate() {
                    let jx = (x as i32 + dx) as usize;
                    let jy = (y as i32 + dy) as usize;
                    let j = jy * w + jx;
                    let sw = wgt.sqrt();
                    for c in 0..channels {
                        let gi = c * w * h + j;
                        let (gx, gy) = (g.dx[gi], g.dy[gi]);
                        let col = c * l + slot;
                        let (v0, v1) = match (&tables, dirs) {
                            (Some((cos, sin)), Some(d)) => {
                                let (ct, st) = (cos[j], sin[j]);
                                (
                                    d.alpha_plus * (ct * gx + st * gy),
                                    d.alpha_minor[j] * (-st * gx + ct * gy),
                                )
                            }
                            _ => (gx, gy),
                        };
                        block[col] = sw * v0;
                        block[cols + col] = sw * v1;
                    }
                }
            }
        });

    Ok(out)
}

/// Adjoint of [`apply_jacobian`]: satisfies
/// `<apply_jacobian(f), X> == <f, apply_jacobian_adjoint(X)>` exactly (up to
/// rounding) for every `f` and `X`.
pub fn apply_jacobian_adjoint(x: &JacobianField, mode: &RegularizerMode) -> Result<ImageField> {
    let graph = mode.graph();
    let (w, h) = (x.width, x.height);
    if w != graph.width || h != graph.height || x.neighbors != graph.neighbors {
        return Err(Error::ShapeMismatch(format!(
            "jacobian field {}x{} (L={}) vs graph {}x{} (L={})",
            w, h, x.neighbors, graph.width, graph.height, graph.neighbors
        )));
    }
    if let Some(d) = mode.dirs() {
        if d.width != w || d.height != h {
            return Err(Error::ShapeMismatch(format!(
                "direction field {}x{} vs jacobian field {}x{}",
                d.width, d.height, w, h
            )));
        }
    }
    let channels = x.channels;
    let l = x.neighbors;
    let cols = x.block_cols();
    let block_len = 2 * cols;
    let tables = mode.dirs().map(direction_tables);
    let dirs = mode.dirs();

    // Accumulate the transposed per-column contributions into a gradient
    // field, then apply grad^T = -div. Scatter order is fixed (sequential
    // over pixels) so results are bit-reproducible.
    let mut acc = crate::linops::GradientField::zeros(w, h, channels);
    for pix in 0..w * h {
        let (px, py) = (pix % w, pix / w);
        let (offs, wgts) = graph.entries(pix);
        let block = &x.data[pix * block_len..(pix + 1) * block_len];
        for (slot, (&(dx, dy), &wgt)) in offs.iter().zip(wgts).enumerate() {
            let jx = (px as i32 + dx) as usize;
            let jy = (py as i32 + dy) as usize;
            let j = jy * w + jx;
            let sw = wgt.sqrt();
            for c in 0..channels {
                let col = c * l + slot;
                let t0 = block[col];
                let t1 = block[cols + col];
                let (u0, u1) = match (&tables, dirs) {
                    (Some((cos, sin)), Some(d)) => {
                        let (ct, st) = (cos[j], sin[j]);
                        let a0 = d.alpha_plus * t0;
                        let a1 = d.alpha_minor[j] * t1;
                        // R(theta) * diag(alpha) * t — transpose of the forward map
                        (ct * a0 - st * a1, st * a0 + ct * a1)
                    }
                    _ => (t0, t1),
                };
                let gi = c * w * h + j;
                acc.dx[gi] += sw * u0;
                acc.dy[gi] += sw * u1;
            }
        }
    }
    Ok(div(&acc).scaled(-1.0))
}

// ---------------------------------------------------------------------------
// Schatten norms of 2 x k blocks
// ---------------------------------------------------------------------------

/// Which Schatten norm acts on the per-pixel singular value pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchattenOrder {
    /// Nuclear norm `sigma_1 + sigma_2`.
    One,
    /// Frobenius norm `sqrt(sigma_1^2 + sigma_2^2)`.
    Two,
    /// Spectral norm `sigma_1`.
    Inf,
}

impl std::str::FromStr for SchattenOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(SchattenOrder::One),
            "2" => Ok(SchattenOrder::Two),
            "inf" => Ok(SchattenOrder::Inf),
            other => Err(Error::InvalidParameter(format!(
                "schatten order '{other}' (expected 1, 2 or inf)"
            ))),
        }
    }
}

/// Singular values of a `2 x k` block (row-major, first `k` entries = row 0),
/// largest first, via the eigenvalues of the 2x2 Gram matrix `M M^T`.
pub fn singular_values_2xk(block: &[f64]) -> (f64, f64) {
    debug_assert!(block.len() % 2 == 0);
    let k = block.len() / 2;
    let (r0, r1) = block.split_at(k);
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for i in 0..k {
        a += r0[i] * r0[i];
        b += r0[i] * r1[i];
        c += r1[i] * r1[i];
    }
    let mean = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = mean + disc;
    // rounding can push the smaller eigenvalue a hair negative
    let l2 = (mean - disc).max(0.0);
    (l1.sqrt(), l2.sqrt())
}

/// Schatten norm of a `2 x k` block.
pub fn schatten_norm(block: &[f64], p: SchattenOrder) -> f64 {
    match p {
        SchattenOrder::Two => block.iter().map(|v| v * v).sum::<f64>().sqrt(),
        SchattenOrder::One => {
            let (s1, s2) = singular_values_2xk(block);
            s1 + s2
        }
        SchattenOrder::Inf => singular_values_2xk(block).0,
    }
}

/// Total regularizer value: sum over pixels of the block Schatten norm.
pub fn regularizer_value(f: &ImageField, mode: &RegularizerMode, p: SchattenOrder) -> Result<f64> {
    let jf = apply_jacobian(f, mode)?;
    let n = f.width * f.height;
    Ok((0..n).map(|pix| schatten_norm(jf.block(pix), p)).sum())
}
