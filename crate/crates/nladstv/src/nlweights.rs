//! Patch-similarity neighbor graphs.
//!
//! For every pixel the graph stores the `L` most similar positions inside a
//! search window, scored by Gaussian-weighted patch SSD on a single-channel
//! guide image, with weights `w = exp(-d / beta^2)`. The self pixel always
//! participates with weight 1. A fixed-stencil variant with plain Gaussian
//! window weights backs the local (structure-tensor TV) regularizers, so the
//! downstream Jacobian machinery sees one graph type regardless of method.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageField;
use crate::linops::gaussian_kernel;

/// Patch comparison and neighbor selection parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    /// Odd patch side `s` for the similarity measure.
    pub patch_size: usize,
    /// Odd search-window side `r`.
    pub window_size: usize,
    /// Std of the Gaussian taper applied to patch differences.
    pub rho: f64,
    /// Similarity bandwidth: `w = exp(-d / beta^2)`.
    pub beta: f64,
    /// Number of neighbors kept per pixel (`L`), self included.
    pub neighbors: usize,
}

impl PatchConfig {
    /// Defaults used by the restoration-stage graph.
    pub fn restoration_default() -> Self {
        PatchConfig {
            patch_size: 7,
            window_size: 11,
            rho: 1.75,
            beta: 0.06,
            neighbors: 9,
        }
    }

    /// Defaults used by the direction-estimation graph (smaller patches,
    /// more neighbors).
    pub fn dpe_default() -> Self {
        PatchConfig {
            patch_size: 5,
            window_size: 11,
            rho: 1.25,
            beta: 0.2,
            neighbors: 13,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 || self.patch_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "patch size {} must be odd",
                self.patch_size
            )));
        }
        if self.window_size % 2 == 0 || self.window_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "window size {} must be odd",
                self.window_size
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "patch taper rho {} must be positive",
                self.rho
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "similarity bandwidth beta {} must be positive",
                self.beta
            )));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidParameter("neighbor count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel neighbor offsets and weights, `neighbors` entries per pixel.
///
/// Offsets are stored relative to the owning pixel and always reference
/// in-bounds positions. Entries are sorted by ascending patch distance
/// (window raster order breaking ties), so the self entry of a similarity
/// graph comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGraph {
    pub width: usize,
    pub height: usize,
    /// Entries per pixel (`L`).
    pub neighbors: usize,
    /// `(dx, dy)` per slot, pixel-major: `offsets[pix * neighbors + l]`.
    pub offsets: Vec<(i32, i32)>,
    /// Weight per slot, same indexing.
    pub weights: Vec<f64>,
}

impl WeightGraph {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Offset/weight slices for one pixel.
    pub fn entries(&self, pix: usize) -> (&[(i32, i32)], &[f64]) {
        let a = pix * self.neighbors;
        let b = a + self.neighbors;
        (&self.offsets[a..b], &self.weights[a..b])
    }

    /// Absolute coordinates of neighbor `l` of pixel `(x, y)`.
    #[inline]
    pub fn neighbor(&self, x: usize, y: usize, l: usize) -> (usize, usize) {
        let (dx, dy) = self.offsets[(y * self.width + x) * self.neighbors + l];
        ((x as i32 + dx) as usize, (y as i32 + dy) as usize)
    }

    /// Check structural invariants: in-bounds neighbors, weights in (0, 1].
    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count() * self.neighbors;
        if self.offsets.len() != n || self.weights.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "graph stores {} offsets / {} weights, expected {}",
                self.offsets.len(),
                self.weights.len(),
                n
            )));
        }
        for y in 0..self.height {
            for x in 0..self.width {
                let pix = y * self.width + x;
                let (offs, wgts) = self.entries(pix);
                for (&(dx, dy), &w) in offs.iter().zip(wgts) {
                    let nx = x as i32 + dx;
                    let ny = y as i32 + dy;
                    if nx < 0 || ny < 0 || nx >= self.width as i32 || ny >= self.height as i32 {
                        return Err(Error::ShapeMismatch(format!(
                            "pixel ({x},{y}) references out-of-bounds neighbor ({nx},{ny})"
                        )));
                    }
                    if !(w > 0.0 && w <= 1.0) {
                        return Err(Error::ShapeMismatch(format!(
                            "pixel ({x},{y}) has weight {w} outside (0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gaussian-tapered patch SSD between the patches centered at `a` and `b`.
/// Out-of-bounds patch taps read the nearest in-bounds pixel.
pub fn patch_distance(
    guide: &ImageField,
    a: (usize, usize),
    b: (usize, usize),
    patch_size: usize,
    rho: f64,
) -> f64 {
    debug_assert_eq!(guide.channels, 1);
    let taper = gaussian_kernel(patch_size, rho).expect("validated patch parameters");
    patch_distance_with(guide.plane(0), guide.width, guide.height, a, b, &taper.taps, patch_size)
}

fn patch_distance_with(
    plane: &[f64],
    width: usize,
    height: usize,
    a: (usize, usize),
    b: (usize, usize),
    taper: &[f64],
    patch_size: usize,
) -> f64 {
    let half = (patch_size / 2) as i32;
    let (w, h) = (width as i32, height as i32);
    let mut acc = 0.0;
    let mut t = 0;
    for dy in -half..=half {
        for dx in -half..=half {
            let ax = (a.0 as i32 + dx).clamp(0, w - 1) as usize;
            let ay = (a.1 as i32 + dy).clamp(0, h - 1) as usize;
            let bx = (b.0 as i32 + dx).clamp(0, w - 1) as usize;
            let by = (b.1 as i32 + dy).clamp(0, h - 1) as usize;
            let diff = plane[ay * width + ax] - plane[by * width + bx];
            acc += taper[t] * diff * diff;
            t += 1;
        }
    }
    acc
}

/// Build the patch-similarity graph of a single-channel guide image.
///
/// Candidates are ranked by `(distance, window raster order)`; the best `L`
/// are kept. If ties push the self pixel out of the top `L`, it replaces the
/// worst-ranked selection — the self entry is always present with weight 1.
pub fn build_weight_graph(guide: &ImageField, cfg: &PatchConfig) -> Result<WeightGraph> {
    cfg.validate()?;
    if guide.channels != 1 {
        return Err(Error::InvalidParameter(format!(
            "weight graph wants a single-channel guide, got {} channels",
            guide.channels
        )));
    }
    let (w, h) = (guide.width, guide.height);
    if w == 0 || h == 0 {
        return Err(Error::DegenerateInput("empty guide image".into()));
    }
    let half = (cfg.window_size / 2) as i32;
    // The smallest clipped window sits at a corner.
    let min_window =
        (w as i32).min(half + 1) as usize * (h as i32).min(half + 1) as usize;
    if cfg.neighbors > min_window {
        return Err(Error::Config(format!(
            "{} neighbors requested but corner windows only hold {min_window} candidates",
            cfg.neighbors
        )));
    }
    let taper = gaussian_kernel(cfg.patch_size, cfg.rho)?.taps;
    let l = cfg.neighbors;
    let inv_beta2 = 1.0 / (cfg.beta * cfg.beta);
    let plane = guide.plane(0);

    let mut offsets = vec![(0i32, 0i32); w * h * l];
    let mut weights = vec![0.0f64; w * h * l];
    offsets
        .par_chunks_mut(w * l)
        .zip(weights.par_chunks_mut(w * l))
        .enumerate()
        .for_each(|(y, (off_row, wgt_row))| {
            let mut cand: Vec<(f64, usize, i32, i32)> = Vec::with_capacity(
                cfg.window_size * cfg.window_size,
            );
            for x in 0..w {
                cand.clear();
                let mut raster = 0usize;
                for dy in -half..=half {
                    let ny = y as i32 + dy;
                    if ny < 0 || ny >= h as i32 {
                        continue;
                    }
                    for dx in -half..=half {
                        let nx = x as i32 + dx;
                        if nx < 0 || nx >= w as i32 {
                            continue;
                        }
                        let d = patch_distance_with(
                            plane,
                            w,
                            h,
                            (x, y),
                            (nx as usize, ny as usize),
                            &taper,
                            cfg.patch_size,
                        );
                        cand.push((d, raster, dx, dy));
                        raster += 1;
                    }
                }
                cand.sort_unstable_by(|a, b| {
                    a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                });
                // Force the self pixel in if ties pushed it past rank L.
                if !cand[..l].iter().any(|&(_, _, dx, dy)| dx == 0 && dy == 0) {
                    let self_rank = cand
                        .iter()
                        .position(|&(_, _, dx, dy)| dx == 0 && dy == 0)
                        .expect("self pixel is always a candidate");
                    cand.swap(l - 1, self_rank);
                    cand[..l].sort_unstable_by(|a, b| {
                        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                    });
                }
                for (slot, &(d, _, dx, dy)) in cand[..l].iter().enumerate() {
                    let k = x * l + slot;
                    off_row[k] = (dx, dy);
                    wgt_row[k] = if dx == 0 && dy == 0 {
                        1.0
                    } else {
                        (-d * inv_beta2).exp().max(f64::MIN_POSITIVE)
                    };
                }
            }
        });

    Ok(WeightGraph {
        width: w,
        height: h,
        neighbors: l,
        offsets,
        weights,
    })
}

/// Fixed-stencil graph with normalized Gaussian window weights — the local
/// (structure-tensor) degeneration of the nonlocal machinery.
///
/// Every pixel carries the full `support x support` stencil in window raster
/// order; offsets that would leave the image are clamped to the border, so
/// border pixels may reference the same neighbor more than once (equivalent
/// to a replicate-padded window).
pub fn gaussian_weight_graph(
    width: usize,
    height: usize,
    support: usize,
    sigma: f64,
) -> Result<WeightGraph> {
    if width == 0 || height == 0 {
        return Err(Error::DegenerateInput("empty image".into()));
    }
    let kernel = gaussian_kernel(support, sigma)?;
    let half = (support / 2) as i32;
    let l = support * support;
    let mut offsets = Vec::with_capacity(width * height * l);
    let mut weights = Vec::with_capacity(width * height * l);
    for y in 0..height as i32 {
        for x in 0..width as i32 {
            for dy in -half..=half {
                for dx in -half..=half {
                    let nx = (x + dx).clamp(0, width as i32 - 1);
                    let ny = (y + dy).clamp(0, height as i32 - 1);
                    offsets.push((nx - x, ny - y));
                    weights.push(kernel.tap(dx, dy));
                }
            }
        }
    }
    Ok(WeightGraph {
        width,
        height,
        neighbors: l,
        offsets,
        weights,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const GRAPH_MAGIC: &[u8; 4] = b"NLW1";

/// Write a graph as `NLW1 | u32 w,h,L | i32 (dx,dy) pairs | f64 weights`,
/// all little-endian. Round-trips exactly.
pub fn write_weights(graph: &WeightGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&(graph.width as u32).to_le_bytes())?;
    w.write_all(&(graph.height as u32).to_le_bytes())?;
    w.write_all(&(graph.neighbors as u32).to_le_bytes())?;
    for &(dx, dy) in &graph.offsets {
        w.write_all(&dx.to_le_bytes())?;
        w.write_all(&dy.to_le_bytes())?;
    }
    for &wt in &graph.weights {
        w.write_all(&wt.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a graph written by [`write_weights`], validating invariants.
pub fn read_weights(path: &Path) -> Result<WeightGraph> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| Error::UnsupportedFormat(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != GRAPH_MAGIC {
        return Err(bad("bad magic, expected \"NLW1\""));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let neighbors = read_u32(&mut r)? as usize;
    let n = width as u64 * height as u64 * neighbors as u64;
    if n == 0 || n > (1 << 28) {
        return Err(bad("implausible dimensions"));
    }
    let n = n as usize;
    let mut offsets = Vec::with_capacity(n);
    let mut b8 = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b8).map_err(|_| bad("truncated offsets"))?;
        offsets.push((
            i32::from_le_bytes([b8[0], b8[1], b8[2], b8[3]]),
            i32::from_le_bytes([b8[4], b8[5], b8[6], b8[7]]),
        ));
    }
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8).map_err(|_| bad("truncated weights"))?;
        weights.push(f64::from_le_bytes(b8));
    }
    let graph = WeightGraph {
        width,
        height,
        neighbors,
        offsets,
        weights,
    };
    graph
        .validate()
        .map_err(|e| bad(&format!("invalid graph: {e}")))?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn random_gray(w: usize, h: usize, seed: u64) -> ImageField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageField::from_data(w, h, 1, data).unwrap()
    }

    /// Brute-force restatement of the patch distance with explicit replicate
    /// indexing — the oracle for `patch_distance`.
    fn patch_distance_oracle(
        img: &ImageField,
        a: (usize, usize),
        b: (usize, usize),
        s: usize,
        rho: f64,
    ) -> f64 {
        let half = s as i32 / 2;
        let mut taps = Vec::new();
        for dy in -half..=half {
            for dx in -half..=half {
                taps.push((-((dx * dx + dy * dy) as f64) / (2.0 * rho * rho)).exp());
            }
        }
        let z: f64 = taps.iter().sum();
        let read = |x: i32, y: i32| {
            let cx = x.max(0).min(img.width as i32 - 1) as usize;
            let cy = y.max(0).min(img.height as i32 - 1) as usize;
            img.get(cx, cy, 0)
        };
        let mut acc = 0.0;
        let mut t = 0;
        for dy in -half..=half {
            for dx in -half..=half {
                let d = read(a.0 as i32 + dx, a.1 as i32 + dy)
                    - read(b.0 as i32 + dx, b.1 as i32 + dy);
                acc += taps[t] / z * d * d;
                t += 1;
            }
        }
        acc
    }

    #[test]
    fn patch_distance_matches_oracle_and_is_symmetric() {
        let img = random_gray(14, 10, 3);
        let pairs = [((3, 4), (9, 2)), ((0, 0), (13, 9)), ((5, 5), (5, 5)), ((1, 8), (2, 0))];
        for &(a, b) in &pairs {
            let d = patch_distance(&img, a, b, 5, 1.25);
            let o = patch_distance_oracle(&img, a, b, 5, 1.25);
            assert!((d - o).abs() < 1e-12, "{d} vs oracle {o}");
            let rev = patch_distance(&img, b, a, 5, 1.25);
            assert!((d - rev).abs() < 1e-12, "not symmetric: {d} vs {rev}");
        }
        assert_eq!(patch_distance(&img, (4, 4), (4, 4), 7, 1.75), 0.0);
    }

    #[test]
    fn constant_image_selects_leading_raster_positions_plus_self() {
        let img = ImageField::constant(20, 20, 1, 0.5);
        let cfg = PatchConfig {
            neighbors: 9,
            ..PatchConfig::restoration_default()
        };
        let graph = build_weight_graph(&img, &cfg).unwrap();
        graph.validate().unwrap();
        // interior pixel: window top-left corner is (-5, -5)
        let (x, y) = (10, 10);
        let (offs, wgts) = graph.entries(y * graph.width + x);
        let mut expected: Vec<(i32, i32)> = (0..8).map(|k| (k - 5, -5)).collect();
        expected.push((0, 0));
        assert_eq!(offs, &expected[..]);
        for &w in wgts {
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn self_is_always_present_with_weight_one() {
        let img = random_gray(17, 12, 8);
        let cfg = PatchConfig::restoration_default();
        let graph = build_weight_graph(&img, &cfg).unwrap();
        for pix in 0..graph.pixel_count() {
            let (offs, wgts) = graph.entries(pix);
            let slot = offs
                .iter()
                .position(|&o| o == (0, 0))
                .unwrap_or_else(|| panic!("pixel {pix} lost its self entry"));
            assert_eq!(wgts[slot], 1.0);
        }
    }

    #[test]
    fn entries_are_sorted_by_distance() {
        let img = random_gray(15, 15, 21);
        let cfg = PatchConfig::restoration_default();
        let graph = build_weight_graph(&img, &cfg).unwrap();
        for pix in 0..graph.pixel_count() {
            let (_, wgts) = graph.entries(pix);
            for pair in wgts.windows(2) {
                // ascending distance means non-increasing weight
                assert!(pair[0] >= pair[1] - 1e-15);
            }
        }
    }

    #[test]
    fn periodic_texture_finds_exact_copies() {
        // vertical stripes with period 4: every offset with dx % 4 == 0 is an
        // exact patch copy, so all selected neighbors have distance ~0
        let mut img = ImageField::new(24, 24, 1);
        for y in 0..24 {
            for x in 0..24 {
                img.set(x, y, 0, ((x % 4) as f64) / 4.0);
            }
        }
        let cfg = PatchConfig {
            beta: 0.05,
            ..PatchConfig::restoration_default()
        };
        let graph = build_weight_graph(&img, &cfg).unwrap();
        let (x, y) = (12, 12);
        let (offs, wgts) = graph.entries(y * 24 + x);
        for (&(dx, _), &w) in offs.iter().zip(wgts) {
            assert_eq!(dx.rem_euclid(4), 0, "selected offset dx={dx} is not a period multiple");
            assert!(w > 0.999999, "copy weight should be ~1, got {w}");
        }
    }

    #[test]
    fn too_many_neighbors_for_corner_window_is_a_config_error() {
        let img = random_gray(30, 30, 1);
        let cfg = PatchConfig {
            neighbors: 37, // corner windows hold (5+1)^2 = 36 candidates
            ..PatchConfig::restoration_default()
        };
        assert!(matches!(
            build_weight_graph(&img, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn multichannel_guide_is_rejected() {
        let img = ImageField::new(8, 8, 3);
        assert!(matches!(
            build_weight_graph(&img, &PatchConfig::restoration_default()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn gaussian_graph_has_unit_mass_and_uniform_limit() {
        let g = gaussian_weight_graph(7, 6, 3, 1e9).unwrap();
        assert_eq!(g.neighbors, 9);
        for pix in 0..g.pixel_count() {
            let (_, wgts) = g.entries(pix);
            for &w in wgts {
                assert!((w - 1.0 / 9.0).abs() < 1e-9);
            }
        }
        let g = gaussian_weight_graph(9, 9, 3, 0.8).unwrap();
        g.validate().unwrap();
        for pix in 0..g.pixel_count() {
            let (_, wgts) = g.entries(pix);
            let sum: f64 = wgts.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_graph_clamps_border_offsets() {
        let g = gaussian_weight_graph(5, 5, 5, 1.0).unwrap();
        // corner pixel: every offset must stay in-bounds after clamping
        let (offs, _) = g.entries(0);
        for &(dx, dy) in offs {
            assert!(dx >= 0 && dy >= 0, "corner offset ({dx},{dy}) escapes the image");
            assert!(dx <= 2 && dy <= 2);
        }
        g.validate().unwrap();
    }

    #[test]
    fn graph_serialization_round_trips_exactly() {
        let img = random_gray(13, 9, 5);
        let cfg = PatchConfig {
            neighbors: 5,
            ..PatchConfig::restoration_default()
        };
        let graph = build_weight_graph(&img, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.nlw");
        write_weights(&graph, &path).unwrap();
        let back = read_weights(&path).unwrap();
        assert_eq!(graph, back);
    }

    #[test]
    fn truncated_graph_file_is_rejected() {
        let img = random_gray(6, 6, 5);
        let cfg = PatchConfig {
            neighbors: 4,
            ..PatchConfig::restoration_default()
        };
        let graph = build_weight_graph(&img, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.nlw");
        write_weights(&graph, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.nlw");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_weights(&cut), Err(Error::UnsupportedFormat(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn built_graphs_always_satisfy_invariants(
            w in 1usize..10,
            h in 1usize..10,
            l in 1usize..6,
            seed in 0u64..1000,
        ) {
            let img = random_gray(w, h, seed);
            let cfg = PatchConfig {
                patch_size: 3,
                window_size: 5,
                rho: 0.75,
                beta: 0.1,
                neighbors: l,
            };
            match build_weight_graph(&img, &cfg) {
                Ok(graph) => {
                    graph.validate().unwrap();
                    for pix in 0..graph.pixel_count() {
                        let (offs, wgts) = graph.entries(pix);
                        let slot = offs.iter().position(|&o| o == (0, 0));
                        prop_assert!(slot.is_some(), "self entry missing");
                        prop_assert_eq!(wgts[slot.unwrap()], 1.0);
                    }
                }
                Err(Error::Config(_)) => {
                    // legal only when the corner window is genuinely too small
                    let half = 2i32;
                    let min_window = (w as i32).min(half + 1) * (h as i32).min(half + 1);
                    prop_assert!(l as i32 > min_window);
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
