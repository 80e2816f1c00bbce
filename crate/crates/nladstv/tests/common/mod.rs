//! Shared helpers and independent oracles for the integration suites.
//!
//! The oracles are deliberately written from first principles — plain nested
//! loops, a one-sided Jacobi SVD, 1-D ternary search — and share no code with
//! the implementations they check.

#![allow(dead_code)] // each integration target uses its own subset

use nladstv::image::ImageField;
use nladstv::jacobian::DirectionField;
use nladstv::nlweights::{build_weight_graph, PatchConfig, WeightGraph};
use nladstv::synth::oriented_texture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(width: usize, height: usize, channels: usize, seed: u64) -> ImageField {
    let mut r = rng(seed);
    let data = (0..width * height * channels)
        .map(|_| r.gen_range(0.0..1.0))
        .collect();
    ImageField::from_data(width, height, channels, data).expect("consistent shape")
}

/// Distance between two undirected angles, in radians, in `[0, pi/2]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

// ---------------------------------------------------------------------------
// One-sided Jacobi SVD for 2 x k matrices
// ---------------------------------------------------------------------------

/// Singular system of a row-major 2 x k matrix.
pub struct Svd2xk {
    /// Singular values, descending.
    pub s: [f64; 2],
    /// Left singular vectors (columns of U), matching `s`.
    pub u: [[f64; 2]; 2],
    /// Right singular vectors (unit rows), matching `s`; zero-filled when the
    /// corresponding singular value (numerically) vanishes.
    pub v: [Vec<f64>; 2],
}

/// One-sided Jacobi SVD: a single plane rotation applied to the two rows
/// makes them orthogonal, after which the row norms are the singular values.
pub fn jacobi_svd_2xk(block: &[f64]) -> Svd2xk {
    assert!(block.len() % 2 == 0, "block must be 2 x k");
    let k = block.len() / 2;
    let (r0, r1) = block.split_at(k);
    let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
    for i in 0..k {
        p += r0[i] * r0[i];
        q += r1[i] * r1[i];
        r += r0[i] * r1[i];
    }
    // Rotation angle that zeroes the inner product of the rotated rows.
    let phi = 0.5 * (2.0 * r).atan2(p - q);
    let (c, s) = (phi.cos(), phi.sin());
    let row_a: Vec<f64> = (0..k).map(|i| c * r0[i] + s * r1[i]).collect();
    let row_b: Vec<f64> = (0..k).map(|i| -s * r0[i] + c * r1[i]).collect();
    let na = row_a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = row_b.iter().map(|v| v * v).sum::<f64>().sqrt();

    // X = G^T [a; b]: the columns of G^T paired with the rotated rows are the
    // left singular vectors.
    let unit = |row: &[f64], n: f64| -> Vec<f64> {
        if n > 1e-300 {
            row.iter().map(|v| v / n).collect()
        } else {
            vec![0.0; row.len()]
        }
    };
    let (ua, ub) = ([c, s], [-s, c]);
    if na >= nb {
        Svd2xk {
            s: [na, nb],
            u: [ua, ub],
            v: [unit(&row_a, na), unit(&row_b, nb)],
        }
    } else {
        Svd2xk {
            s: [nb, na],
            u: [ub, ua],
            v: [unit(&row_b, nb), unit(&row_a, na)],
        }
    }
}

/// Nuclear norm of a row-major 2 x k matrix via the Jacobi SVD.
pub fn nuclear_norm_2xk(block: &[f64]) -> f64 {
    let svd = jacobi_svd_2xk(block);
    svd.s[0] + svd.s[1]
}

/// Spectral norm of a row-major 2 x k matrix via the Jacobi SVD.
pub fn spectral_norm_2xk(block: &[f64]) -> f64 {
    jacobi_svd_2xk(block).s[0]
}

// ---------------------------------------------------------------------------
// Independent prox oracle (nuclear norm)
// ---------------------------------------------------------------------------

/// Ternary search for the minimizer of a convex 1-D function on `[lo, hi]`.
pub fn ternary_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    for _ in 0..iters {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

/// Numeric minimizer of `1/2 ||X - Y||_F^2 + lambda * ||X||_S1` over 2 x k
/// matrices. The problem is unitarily invariant, so the minimizer shares Y's
/// singular vectors and each of its singular values minimizes the 1-D section
/// `1/2 (t - sigma)^2 + lambda * |t|`; those sections are solved numerically
/// by ternary search rather than by any closed-form shrinkage rule.
pub fn prox_nuclear_oracle(y: &[f64], lambda: f64) -> Vec<f64> {
    let k = y.len() / 2;
    let svd = jacobi_svd_2xk(y);
    let mut out = vec![0.0; y.len()];
    for idx in 0..2 {
        let sigma = svd.s[idx];
        if sigma <= 1e-300 {
            continue; // the section 1/2 t^2 + lambda |t| bottoms out at 0
        }
        let section = |t: f64| 0.5 * (t - sigma) * (t - sigma) + lambda * t.abs();
        let t = ternary_min(section, -1.0, sigma + 1.0, 300);
        for col in 0..k {
            out[col] += t * svd.u[idx][0] * svd.v[idx][col];
            out[k + col] += t * svd.u[idx][1] * svd.v[idx][col];
        }
    }
    out
}

/// Smooth-GD corroborator for the nuclear prox, valid when the minimizer
/// stays full rank (`lambda < sigma_2(Y)`): gradient descent on the prox
/// objective using `grad ||X||_S1 = u1 v1^T + u2 v2^T`.
pub fn prox_nuclear_gd(y: &[f64], lambda: f64) -> Vec<f64> {
    let k = y.len() / 2;
    let mut x = y.to_vec();
    let eta = 0.05;
    for _ in 0..20_000 {
        let svd = jacobi_svd_2xk(&x);
        for col in 0..k {
            let g_nuc_0 = svd.u[0][0] * svd.v[0][col] + svd.u[1][0] * svd.v[1][col];
            let g_nuc_1 = svd.u[0][1] * svd.v[0][col] + svd.u[1][1] * svd.v[1][col];
            x[col] -= eta * (x[col] - y[col] + lambda * g_nuc_0);
            x[k + col] -= eta * (x[k + col] - y[k + col] + lambda * g_nuc_1);
        }
    }
    x
}

/// Optimality certificate for `X = prox_{lambda S1}(Y)`: with
/// `G = (Y - X) / lambda`, the first-order condition is `||G||_2 <= 1` and
/// `<G, X> = ||X||_S1`. Returns `(spectral_excess, pairing_gap)`, both of
/// which should be ~0 for a correct prox output.
pub fn nuclear_prox_certificate(y: &[f64], x: &[f64], lambda: f64) -> (f64, f64) {
    let g: Vec<f64> = y.iter().zip(x).map(|(a, b)| (a - b) / lambda).collect();
    let spectral_excess = (spectral_norm_2xk(&g) - 1.0).max(0.0);
    let pairing: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
    let pairing_gap = (pairing - nuclear_norm_2xk(x)).abs();
    (spectral_excess, pairing_gap)
}

// ---------------------------------------------------------------------------
// Naive double-loop operators
// ---------------------------------------------------------------------------

/// Direct-definition Jacobian: per pixel, per neighbor slot, per channel, the
/// sqrt-weighted (optionally rotated and anisotropically scaled) forward
/// difference taken at the neighbor. Returns the flat block-major data
/// (`pix * 2CL + row * CL + c * L + slot`).
pub fn naive_jacobian(
    f: &ImageField,
    graph: &WeightGraph,
    dirs: Option<&DirectionField>,
) -> Vec<f64> {
    let (w, h, ch) = (f.width, f.height, f.channels);
    let l = graph.neighbors;
    let cols = ch * l;
    let mut out = vec![0.0; w * h * 2 * cols];
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let (offs, wgts) = graph.entries(pix);
            for (slot, (&(dx, dy), &wgt)) in offs.iter().zip(wgts).enumerate() {
                let jx = (x as i32 + dx) as usize;
                let jy = (y as i32 + dy) as usize;
                let j = jy * w + jx;
                let sw = wgt.sqrt();
                for c in 0..ch {
                    let plane = f.plane(c);
                    let gx = if jx + 1 < w { plane[j + 1] - plane[j] } else { 0.0 };
                    let gy = if jy + 1 < h { plane[j + w] - plane[j] } else { 0.0 };
                    let (v0, v1) = match dirs {
                        Some(d) => {
                            let (ct, st) = (d.theta[j].cos(), d.theta[j].sin());
                            (
                                d.alpha_plus * (ct * gx + st * gy),
                                d.alpha_minor[j] * (-st * gx + ct * gy),
                            )
                        }
                        None => (gx, gy),
                    };
                    out[pix * 2 * cols + c * l + slot] = sw * v0;
                    out[pix * 2 * cols + cols + c * l + slot] = sw * v1;
                }
            }
        }
    }
    out
}

/// Direct-definition nonlocal structure tensor: central-difference gradient
/// (one-sided at borders) and a plain per-pixel sum of weighted gradient
/// outer products over the patch-similar neighbors. Returns (t11, t12, t22).
pub fn naive_nonlocal_structure_tensor(
    gray: &ImageField,
    cfg: &PatchConfig,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(gray.channels, 1, "oracle expects a single-channel image");
    let graph = build_weight_graph(gray, cfg).expect("valid patch config");
    let (w, h) = (gray.width, gray.height);
    let plane = gray.plane(0);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = (plane[y * w + xr] - plane[y * w + xl]) / (xr - xl).max(1) as f64;
            gy[y * w + x] = (plane[yd * w + x] - plane[yu * w + x]) / (yd - yu).max(1) as f64;
        }
    }
    let mut t11 = vec![0.0; w * h];
    let mut t12 = vec![0.0; w * h];
    let mut t22 = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let (offs, wgts) = graph.entries(pix);
            for (&(dx, dy), &wgt) in offs.iter().zip(wgts) {
                let j = (y as i32 + dy) as usize * w + (x as i32 + dx) as usize;
                t11[pix] += wgt * gx[j] * gx[j];
                t12[pix] += wgt * gx[j] * gy[j];
                t22[pix] += wgt * gy[j] * gy[j];
            }
        }
    }
    (t11, t12, t22)
}

// ---------------------------------------------------------------------------
// Acceptance corpus
// ---------------------------------------------------------------------------

/// Three 128 x 128 strongly oriented texture crops (distinct angles, spatial
/// frequencies, and harmonic mixes). The last one is coarse enough to survive
/// a sigma_b = 6 Gaussian blur and doubles as the deblurring crop.
pub fn acceptance_crops() -> Vec<(&'static str, ImageField)> {
    vec![
        ("tex20", oriented_texture(128, 128, 20f64.to_radians(), 14.0, 101)),
        ("tex70", oriented_texture(128, 128, 70f64.to_radians(), 10.0, 202)),
        ("tex115", oriented_texture(128, 128, 115f64.to_radians(), 18.0, 303)),
    ]
}
