//! Acceptance gate: every criterion runs at its stated tolerance and prints
//! one `[PASS]`/`[FAIL]` line; the test fails if any criterion fails.
//!
//! Run `cargo test --test acceptance -- --nocapture` to watch the lines as
//! they appear (the summary is also embedded in the panic message on
//! failure). The restoration campaigns dominate the runtime; expect several
//! minutes.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use nladstv::dpe::{
    estimate_parameters, nonlocal_structure_tensor, DpeConfig, ORIENTATION_BINS,
};
use nladstv::image::{add_gaussian_noise, psnr, ImageField};
use nladstv::jacobian::{
    apply_jacobian, apply_jacobian_adjoint, regularizer_value, DirectionField, JacobianField,
    RegularizerMode, SchattenOrder,
};
use nladstv::linops::{bsnr_sigma, gaussian_kernel, wiener_deblur, ForwardModel};
use nladstv::nlweights::{build_weight_graph, gaussian_weight_graph, PatchConfig};
use nladstv::proxsolve::{admm_restore_detailed, prox_schatten, SolverConfig};
use nladstv::synth::stripes;
use rand::Rng;

// ---------------------------------------------------------------------------
// Shared campaign state (criteria 5-8 feed off the same solver runs)
// ---------------------------------------------------------------------------

/// One solver invocation's convergence bookkeeping for criterion 8.
struct SolveRecord {
    label: String,
    /// First iteration at which both primal residuals sit under
    /// `1e-3 * sqrt(dim)` (and still do at exit).
    residuals_ok_at: Option<usize>,
    iterations: usize,
}

#[derive(Clone, Copy)]
struct Best {
    psnr: f64,
    tau: f64,
}

#[derive(Default)]
struct Suite {
    records: Vec<SolveRecord>,
    /// Per crop: method name -> best grid-search result.
    denoise: Vec<(&'static str, f64, BTreeMap<&'static str, Best>)>,
    deblur: BTreeMap<&'static str, Best>,
    /// (label, objective of the tol-stopped run, objective of the
    /// 600-iteration reference run).
    reference_checks: Vec<(String, f64, f64)>,
}

/// Run the solver with default stopping (200 iterations, tol 1e-4), log the
/// criterion-8 residual bookkeeping, and return (restored, psnr, final
/// objective).
fn tracked_solve(
    suite: &mut Suite,
    label: String,
    g: &ImageField,
    clean: &ImageField,
    model: &ForwardModel,
    mode: &RegularizerMode,
    tau: f64,
) -> (f64, f64) {
    let cfg = SolverConfig::new(tau);
    let out = admm_restore_detailed(g, model, mode, &cfg, None)
        .unwrap_or_else(|e| panic!("{label}: solver failed: {e}"));
    let l = mode.graph().neighbors;
    let dim_z1 = (g.width * g.height * 2 * g.channels * l) as f64;
    let dim_z2 = (g.width * g.height * g.channels) as f64;
    let (b1, b2) = (1e-3 * dim_z1.sqrt(), 1e-3 * dim_z2.sqrt());
    let last_ok = out
        .log
        .last()
        .map(|e| e.primal_residual_z1 < b1 && e.primal_residual_z2 < b2)
        .unwrap_or(false);
    let first_ok = out
        .log
        .iter()
        .find(|e| e.primal_residual_z1 < b1 && e.primal_residual_z2 < b2)
        .map(|e| e.iteration);
    suite.records.push(SolveRecord {
        label,
        residuals_ok_at: if last_ok { first_ok } else { None },
        iterations: out.iterations,
    });
    let db = psnr(clean, &out.image, 1.0).expect("same shape");
    let obj = out.log.last().expect("at least one iteration").objective;
    (db, obj)
}

/// 600-iteration reference objective for the same problem (no early stop).
fn reference_objective(
    g: &ImageField,
    model: &ForwardModel,
    mode: &RegularizerMode,
    tau: f64,
) -> f64 {
    let cfg = SolverConfig {
        max_iter: 600,
        tol: 0.0,
        ..SolverConfig::new(tau)
    };
    let out = admm_restore_detailed(g, model, mode, &cfg, None).expect("reference run");
    out.log.last().expect("600 iterations").objective
}

// ---------------------------------------------------------------------------
// Criterion 1: adjoint identity
// ---------------------------------------------------------------------------

fn criterion_adjoint() -> Result<String, String> {
    let mut r = rng(0xADAD);
    let mut max_rel = 0.0f64;
    let mut trials = 0usize;
    for rep in 0..9u64 {
        for &channels in &[1usize, 3] {
            for &l in &[1usize, 4, 9] {
                for directional in [false, true] {
                    let w = r.gen_range(6..=16);
                    let h = r.gen_range(6..=16);
                    let seed = rep * 1000 + (channels * 100 + l * 10 + directional as usize) as u64;
                    let guide = random_image(w, h, 1, seed);
                    let cfg = PatchConfig {
                        patch_size: 3,
                        window_size: 5,
                        rho: 0.75,
                        beta: 0.2,
                        neighbors: l,
                    };
                    let graph = build_weight_graph(&guide, &cfg).map_err(|e| e.to_string())?;
                    let mode = if directional {
                        let n = w * h;
                        let dirs = DirectionField {
                            width: w,
                            height: h,
                            theta: (0..n).map(|_| r.gen_range(0.0..std::f64::consts::PI)).collect(),
                            alpha_minor: (0..n).map(|_| r.gen_range(1.0..4.0)).collect(),
                            alpha_plus: 4.0,
                        };
                        RegularizerMode::Nladstv { graph, dirs }
                    } else {
                        RegularizerMode::Nlstv { graph }
                    };
                    let x = random_image(w, h, channels, seed + 7);
                    let mut y = JacobianField::zeros(w, h, channels, l);
                    for v in y.data.iter_mut() {
                        *v = r.gen_range(-1.0..1.0);
                    }
                    let lhs = apply_jacobian(&x, &mode).map_err(|e| e.to_string())?.dot(&y);
                    let rhs = x.dot(&apply_jacobian_adjoint(&y, &mode).map_err(|e| e.to_string())?);
                    let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-30);
                    max_rel = max_rel.max(rel);
                    trials += 1;
                }
            }
        }
    }
    if trials < 100 {
        return Err(format!("only {trials} trials (need >= 100)"));
    }
    if max_rel > 1e-10 {
        return Err(format!("max relative error {max_rel:.3e} > 1e-10 over {trials} trials"));
    }
    Ok(format!("{trials} trials, max relative error {max_rel:.1e}"))
}

// ---------------------------------------------------------------------------
// Criterion 2: prox oracle
// ---------------------------------------------------------------------------

fn criterion_prox() -> Result<String, String> {
    let ks = [2usize, 6, 18, 27];
    let mut r = rng(0x9609);
    let mut max_diff = 0.0f64;
    let mut max_gd_diff = 0.0f64;
    let mut max_excess = 0.0f64;
    let mut max_gap = 0.0f64;
    let mut gd_cases = 0usize;
    let blocks = 56usize;
    for i in 0..blocks {
        let k = ks[i % ks.len()];
        let lambda = r.gen_range(0.02..1.2);
        let y: Vec<f64> = (0..2 * k).map(|_| r.gen_range(-1.5..1.5)).collect();
        let got = prox_schatten(&y, lambda, SchattenOrder::One).map_err(|e| e.to_string())?;
        let want = prox_nuclear_oracle(&y, lambda);
        let diff = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        max_diff = max_diff.max(diff);

        let (excess, gap) = nuclear_prox_certificate(&y, &got, lambda);
        max_excess = max_excess.max(excess);
        max_gap = max_gap.max(gap);

        let sigma2 = jacobi_svd_2xk(&y).s[1];
        if lambda < 0.9 * sigma2 {
            let gd = prox_nuclear_gd(&y, lambda);
            let d = got
                .iter()
                .zip(&gd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            max_gd_diff = max_gd_diff.max(d);
            gd_cases += 1;
        }
    }
    if max_diff > 1e-6 {
        return Err(format!("ternary oracle disagrees by {max_diff:.3e} > 1e-6"));
    }
    if max_excess > 1e-9 || max_gap > 1e-9 {
        return Err(format!(
            "optimality certificate violated: spectral excess {max_excess:.3e}, pairing gap {max_gap:.3e}"
        ));
    }
    if max_gd_diff > 1e-6 {
        return Err(format!("smooth-GD corroborator disagrees by {max_gd_diff:.3e} > 1e-6"));
    }
    Ok(format!(
        "{blocks} blocks (k in {{2,6,18,27}}): ternary oracle diff {max_diff:.1e}, GD corroborator diff {max_gd_diff:.1e} on {gd_cases} full-rank cases, certificate excess {max_excess:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3: degeneration (ratio + restore parity)
// ---------------------------------------------------------------------------

fn criterion_degeneration(suite: &mut Suite) -> Result<String, String> {
    // Regularizer ratio: alpha- = alpha+ = 4, constant theta scales every
    // singular value by exactly 4.
    let img = random_image(16, 12, 3, 0x0303);
    let guide = random_image(16, 12, 1, 0x0304);
    let cfg = PatchConfig {
        patch_size: 3,
        window_size: 5,
        rho: 0.75,
        beta: 0.2,
        neighbors: 4,
    };
    let graph = build_weight_graph(&guide, &cfg).map_err(|e| e.to_string())?;
    let mut worst_ratio_err = 0.0f64;
    for &theta in &[0.0, 0.7] {
        let dirs = DirectionField::uniform(16, 12, theta, 4.0, 4.0);
        let base = regularizer_value(&img, &RegularizerMode::Nlstv { graph: graph.clone() }, SchattenOrder::One)
            .map_err(|e| e.to_string())?;
        let scaled = regularizer_value(
            &img,
            &RegularizerMode::Nladstv { graph: graph.clone(), dirs },
            SchattenOrder::One,
        )
        .map_err(|e| e.to_string())?;
        worst_ratio_err = worst_ratio_err.max((scaled / base - 4.0).abs() / 4.0);
    }
    if worst_ratio_err > 1e-10 {
        return Err(format!("regularizer ratio off by {worst_ratio_err:.3e} relative (> 1e-10)"));
    }

    // Restore parity on 32x32: nladstv(tau) with the 4x-scaled operator must
    // land on the same minimizer as nlstv(4 tau). Both runs are pushed to
    // machine-level convergence; their iterates differ (different penalty
    // scaling), the fixed point does not.
    let clean = stripes(32, 32, 30f64.to_radians(), 8.0, 0.4);
    let g = add_gaussian_noise(&clean, 0.05, 5).map_err(|e| e.to_string())?;
    let graph = build_weight_graph(&g, &PatchConfig::restoration_default()).map_err(|e| e.to_string())?;
    let tau = 0.01;
    let tight = |t: f64| SolverConfig {
        max_iter: 4000,
        tol: 1e-13,
        cg_tol: 1e-12,
        cg_max_iter: 500,
        ..SolverConfig::new(t)
    };
    let dirs = DirectionField::uniform(32, 32, 0.0, 4.0, 4.0);
    let a = admm_restore_detailed(
        &g,
        &ForwardModel::Identity,
        &RegularizerMode::Nladstv { graph: graph.clone(), dirs },
        &tight(tau),
        None,
    )
    .map_err(|e| e.to_string())?;
    let b = admm_restore_detailed(
        &g,
        &ForwardModel::Identity,
        &RegularizerMode::Nlstv { graph },
        &tight(4.0 * tau),
        None,
    )
    .map_err(|e| e.to_string())?;
    // These two are acceptance runs as well: criterion 8 wants their primal
    // residuals under the bound within 200 iterations.
    for (name, run, l) in [("parity-nladstv", &a, 9usize), ("parity-nlstv", &b, 9)] {
        let dim_z1 = (32.0f64 * 32.0 * 2.0 * l as f64).sqrt();
        let dim_z2 = (32.0f64 * 32.0).sqrt();
        let (b1, b2) = (1e-3 * dim_z1, 1e-3 * dim_z2);
        let first_ok = run
            .log
            .iter()
            .find(|e| e.primal_residual_z1 < b1 && e.primal_residual_z2 < b2)
            .map(|e| e.iteration);
        suite.records.push(SolveRecord {
            label: format!("degeneration {name}"),
            residuals_ok_at: first_ok,
            iterations: run.iterations,
        });
    }
    let diff = a.image.max_abs_diff(&b.image);
    if diff > 1e-8 {
        return Err(format!("restore parity differs by {diff:.3e} (> 1e-8)"));
    }
    Ok(format!(
        "regularizer ratio exact to {worst_ratio_err:.1e} relative; 32x32 restore parity {diff:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4: DPE accuracy
// ---------------------------------------------------------------------------

fn criterion_dpe() -> Result<String, String> {
    // The accuracy bars below assume the stock filter-bank constants; pin
    // them here so config drift cannot silently weaken the criterion.
    let d = DpeConfig::default();
    if d.agk_sigma != 0.75 || d.agk_psi != 4.0 || ORIENTATION_BINS != 12 {
        return Err(format!(
            "estimation constants drifted: sigma {} psi {} bins {ORIENTATION_BINS}",
            d.agk_sigma, d.agk_psi
        ));
    }
    let tol = 7.5f64.to_radians();
    let angles = [0.0f64, 30.0, 75.0, 120.0];
    let mut details = Vec::new();
    for (noise, bar) in [(0.0, 0.85), (0.1, 0.70)] {
        for (ai, &deg) in angles.iter().enumerate() {
            let truth = deg.to_radians();
            let clean = stripes(96, 96, truth, 8.0, 0.4);
            let img = if noise > 0.0 {
                add_gaussian_noise(&clean, noise, 700 + ai as u64).map_err(|e| e.to_string())?
            } else {
                clean
            };
            let dirs = estimate_parameters(&img, 4.0, &ForwardModel::Identity)
                .map_err(|e| e.to_string())?;
            let mut good = 0usize;
            let mut total = 0usize;
            for y in 16..80 {
                for x in 16..80 {
                    total += 1;
                    if angular_distance(dirs.theta[y * 96 + x], truth) <= tol {
                        good += 1;
                    }
                }
            }
            let frac = good as f64 / total as f64;
            if frac < bar {
                return Err(format!(
                    "{deg} degrees at sigma {noise}: {:.1}% within 7.5 degrees (need >= {:.0}%)",
                    100.0 * frac,
                    100.0 * bar
                ));
            }
            details.push(format!("{deg}°@σ{noise}: {:.0}%", 100.0 * frac));
        }
    }
    Ok(details.join(", "))
}

// ---------------------------------------------------------------------------
// Criteria 5 & 6: denoising campaign
// ---------------------------------------------------------------------------

fn method_grid(method: &'static str) -> &'static [f64] {
    match method {
        "stv" => &[0.02, 0.04, 0.08, 0.16],
        "adstv" => &[0.01, 0.02, 0.04, 0.08],
        "nlstv" => &[0.02, 0.04, 0.08, 0.16],
        "nladstv" => &[0.005, 0.01, 0.02, 0.04],
        _ => unreachable!(),
    }
}

fn criterion_denoise_trend(suite: &mut Suite) -> Result<String, String> {
    let crops = acceptance_crops();
    for (ci, (name, clean)) in crops.iter().enumerate() {
        let noisy = add_gaussian_noise(clean, 0.1, 900 + ci as u64).map_err(|e| e.to_string())?;
        let noisy_db = psnr(clean, &noisy, 1.0).map_err(|e| e.to_string())?;
        let dirs = estimate_parameters(&noisy, 4.0, &ForwardModel::Identity)
            .map_err(|e| e.to_string())?;
        let nl_graph = build_weight_graph(&noisy, &PatchConfig::restoration_default())
            .map_err(|e| e.to_string())?;
        let local_graph =
            gaussian_weight_graph(clean.width, clean.height, 3, 0.5).map_err(|e| e.to_string())?;
        let mut bests = BTreeMap::new();
        for method in ["stv", "adstv", "nlstv", "nladstv"] {
            let mut best = Best {
                psnr: f64::NEG_INFINITY,
                tau: 0.0,
            };
            for &tau in method_grid(method) {
                let graph = if method.starts_with("nl") {
                    nl_graph.clone()
                } else {
                    local_graph.clone()
                };
                let mode = if method.ends_with("adstv") {
                    RegularizerMode::Nladstv { graph, dirs: dirs.clone() }
                } else {
                    RegularizerMode::Nlstv { graph }
                };
                let (db, obj) = tracked_solve(
                    suite,
                    format!("denoise {name} {method} tau {tau}"),
                    &noisy,
                    clean,
                    &ForwardModel::Identity,
                    &mode,
                    tau,
                );
                if db > best.psnr {
                    best = Best { psnr: db, tau };
                }
                // Reference-objective comparison on the first crop's nonlocal
                // cells at the grid midpoints (criterion 8).
                if ci == 0 && method.starts_with("nl") && tau == method_grid(method)[1] {
                    let r = reference_objective(&noisy, &ForwardModel::Identity, &mode, tau);
                    suite
                        .reference_checks
                        .push((format!("denoise {name} {method} tau {tau}"), obj, r));
                }
            }
            bests.insert(method, best);
        }
        suite.denoise.push((name, noisy_db, bests));
    }

    let margin: Vec<f64> = suite
        .denoise
        .iter()
        .map(|(_, _, b)| b["nladstv"].psnr - b["nlstv"].psnr)
        .collect();
    let mean_margin = margin.iter().sum::<f64>() / margin.len() as f64;
    if mean_margin <= 0.0 {
        return Err(format!("mean PSNR margin {mean_margin:.3} dB (need > 0)"));
    }
    if let Some((i, m)) = margin
        .iter()
        .enumerate()
        .find(|(_, &m)| m < -0.05)
        .map(|(i, m)| (i, *m))
    {
        return Err(format!(
            "{}: nladstv trails nlstv by {:.3} dB (> 0.05 allowed)",
            suite.denoise[i].0, -m
        ));
    }
    let per_image = suite
        .denoise
        .iter()
        .zip(&margin)
        .map(|((n, _, b), m)| {
            format!(
                "{n}: nladstv {:.2} vs nlstv {:.2} ({m:+.2})",
                b["nladstv"].psnr, b["nlstv"].psnr
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(format!("mean margin {mean_margin:+.2} dB — {per_image}"))
}

fn criterion_denoise_sanity(suite: &Suite) -> Result<String, String> {
    if suite.denoise.is_empty() {
        return Err("denoising campaign unavailable (criterion 5 crashed)".into());
    }
    let mut worst = f64::INFINITY;
    for (name, noisy_db, bests) in &suite.denoise {
        for (method, best) in bests {
            let gain = best.psnr - noisy_db;
            worst = worst.min(gain);
            if gain < 3.0 {
                return Err(format!(
                    "{name} {method}: gain {gain:.2} dB over noisy (need >= 3)"
                ));
            }
        }
    }
    Ok(format!("all 4 methods on all 3 crops gain >= 3 dB (worst {worst:.2} dB)"))
}

// ---------------------------------------------------------------------------
// Criterion 7: deblurring round trip
// ---------------------------------------------------------------------------

fn criterion_deblur(suite: &mut Suite) -> Result<String, String> {
    let crops = acceptance_crops();
    let (name, clean) = &crops[2]; // coarsest texture survives sigma_b = 6
    let kernel = gaussian_kernel(9, 6.0).map_err(|e| e.to_string())?;
    let model = ForwardModel::Convolution(kernel.clone());
    let blurred = model.apply(clean);
    let sigma = bsnr_sigma(&blurred, 30.0).map_err(|e| e.to_string())?;
    let g = add_gaussian_noise(&blurred, sigma, 1300).map_err(|e| e.to_string())?;
    let wiener = wiener_deblur(&g, &kernel, 1e-2).map_err(|e| e.to_string())?;
    let dirs = estimate_parameters(&g, 4.0, &model).map_err(|e| e.to_string())?;
    let graph = build_weight_graph(&wiener, &PatchConfig::restoration_default())
        .map_err(|e| e.to_string())?;

    let taus = [0.00025, 0.0005, 0.001, 0.002, 0.004];
    for method in ["nlstv", "nladstv"] {
        let mut best = Best {
            psnr: f64::NEG_INFINITY,
            tau: 0.0,
        };
        for &tau in &taus {
            let mode = if method == "nladstv" {
                RegularizerMode::Nladstv { graph: graph.clone(), dirs: dirs.clone() }
            } else {
                RegularizerMode::Nlstv { graph: graph.clone() }
            };
            let (db, obj) = tracked_solve(
                suite,
                format!("deblur {name} {method} tau {tau}"),
                &g,
                clean,
                &model,
                &mode,
                tau,
            );
            if db > best.psnr {
                best = Best { psnr: db, tau };
            }
            if method == "nladstv" && tau == taus[2] {
                let r = reference_objective(&g, &model, &mode, tau);
                suite
                    .reference_checks
                    .push((format!("deblur {name} {method} tau {tau}"), obj, r));
            }
        }
        suite.deblur.insert(method, best);
    }
    let (nl, ad) = (suite.deblur["nlstv"], suite.deblur["nladstv"]);
    if ad.psnr < nl.psnr - 0.05 {
        return Err(format!(
            "nladstv {:.2} dB trails nlstv {:.2} dB by more than 0.05",
            ad.psnr, nl.psnr
        ));
    }
    Ok(format!(
        "{name}: nladstv {:.2} dB (tau {}) vs nlstv {:.2} dB (tau {})",
        ad.psnr, ad.tau, nl.psnr, nl.tau
    ))
}

// ---------------------------------------------------------------------------
// Criterion 8: ADMM convergence
// ---------------------------------------------------------------------------

fn criterion_admm(suite: &Suite) -> Result<String, String> {
    if suite.records.is_empty() {
        return Err("no solver runs recorded (earlier criteria crashed)".into());
    }
    let mut worst_iter = 0usize;
    for rec in &suite.records {
        match rec.residuals_ok_at {
            Some(it) if it <= 200 => worst_iter = worst_iter.max(it),
            Some(it) => {
                return Err(format!(
                    "{}: residual bound reached only at iteration {it} (> 200)",
                    rec.label
                ))
            }
            None => {
                return Err(format!(
                    "{}: primal residuals never fell below 1e-3*sqrt(dim) (ran {} iterations)",
                    rec.label, rec.iterations
                ))
            }
        }
    }
    if suite.reference_checks.is_empty() {
        return Err("no 600-iteration reference comparisons recorded".into());
    }
    let mut worst_rel = 0.0f64;
    for (label, obj, reference) in &suite.reference_checks {
        let rel = (obj - reference).abs() / reference.abs().max(1e-30);
        worst_rel = worst_rel.max(rel);
        if rel > 1e-3 {
            return Err(format!(
                "{label}: stopped objective {obj:.6e} vs 600-iter reference {reference:.6e} ({:.3}% off, > 0.1%)",
                100.0 * rel
            ));
        }
    }
    Ok(format!(
        "{} runs met the residual bound (latest at iteration {worst_iter}); {} reference objectives within {:.4}%",
        suite.records.len(),
        suite.reference_checks.len(),
        100.0 * worst_rel
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9: brute-force operator equivalence
// ---------------------------------------------------------------------------

fn criterion_brute_force() -> Result<String, String> {
    let guide = random_image(10, 10, 1, 0x0901);
    let cfg = PatchConfig {
        patch_size: 3,
        window_size: 5,
        rho: 0.75,
        beta: 0.1,
        neighbors: 6,
    };
    let graph = build_weight_graph(&guide, &cfg).map_err(|e| e.to_string())?;
    let mut r = rng(0x0902);
    let n = 100;
    let dirs = DirectionField {
        width: 10,
        height: 10,
        theta: (0..n).map(|_| r.gen_range(0.0..std::f64::consts::PI)).collect(),
        alpha_minor: (0..n).map(|_| r.gen_range(1.0..4.0)).collect(),
        alpha_plus: 4.0,
    };
    let mut max_j = 0.0f64;
    for channels in [1usize, 3] {
        let img = random_image(10, 10, channels, 0x0910 + channels as u64);
        for directional in [false, true] {
            let mode = if directional {
                RegularizerMode::Nladstv { graph: graph.clone(), dirs: dirs.clone() }
            } else {
                RegularizerMode::Nlstv { graph: graph.clone() }
            };
            let fast = apply_jacobian(&img, &mode).map_err(|e| e.to_string())?;
            let slow = naive_jacobian(
                &img,
                &graph,
                if directional { Some(&dirs) } else { None },
            );
            let d = fast
                .data
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            max_j = max_j.max(d);
        }
    }
    if max_j > 1e-12 {
        return Err(format!("apply_jacobian deviates from the double loop by {max_j:.3e}"));
    }

    let gray = random_image(10, 10, 1, 0x0920);
    let nlst_cfg = PatchConfig {
        patch_size: 3,
        window_size: 7,
        rho: 0.75,
        beta: 0.2,
        neighbors: 5,
    };
    let fast = nonlocal_structure_tensor(&gray, &nlst_cfg).map_err(|e| e.to_string())?;
    let (t11, t12, t22) = naive_nonlocal_structure_tensor(&gray, &nlst_cfg);
    let mut max_t = 0.0f64;
    for i in 0..100 {
        max_t = max_t
            .max((fast.t11[i] - t11[i]).abs())
            .max((fast.t12[i] - t12[i]).abs())
            .max((fast.t22[i] - t22[i]).abs());
    }
    if max_t > 1e-12 {
        return Err(format!(
            "nonlocal_structure_tensor deviates from the double loop by {max_t:.3e}"
        ));
    }
    Ok(format!(
        "jacobian max deviation {max_j:.1e}, structure tensor max deviation {max_t:.1e} (10x10, C in {{1,3}}, both modes)"
    ))
}

// ---------------------------------------------------------------------------
// Gate
// ---------------------------------------------------------------------------

struct Outcome {
    id: usize,
    name: &'static str,
    result: Result<String, String>,
    elapsed: Duration,
    budget: Option<Duration>,
}

fn run_criterion(
    outcomes: &mut Vec<Outcome>,
    id: usize,
    name: &'static str,
    budget_s: Option<u64>,
    f: impl FnOnce() -> Result<String, String>,
) {
    let start = Instant::now();
    let result = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panicked: {msg}"))
        }
    };
    let elapsed = start.elapsed();
    let budget = budget_s.map(Duration::from_secs);
    let result = match (result, budget) {
        (Ok(d), Some(b)) if elapsed > b => Err(format!(
            "passed checks but took {:.1}s (budget {:.0}s) — {d}",
            elapsed.as_secs_f64(),
            b.as_secs_f64()
        )),
        (r, _) => r,
    };
    outcomes.push(Outcome {
        id,
        name,
        result,
        elapsed,
        budget,
    });
}

#[test]
fn acceptance_gate() {
    let mut suite = Suite::default();
    let mut outcomes = Vec::new();

    run_criterion(&mut outcomes, 1, "adjoint identity", Some(10), criterion_adjoint);
    run_criterion(&mut outcomes, 2, "prox oracle", Some(30), criterion_prox);
    run_criterion(&mut outcomes, 3, "degeneration", None, || {
        criterion_degeneration(&mut suite)
    });
    run_criterion(&mut outcomes, 4, "direction estimation accuracy", Some(60), criterion_dpe);
    run_criterion(&mut outcomes, 5, "denoising trend", Some(30 * 60), || {
        criterion_denoise_trend(&mut suite)
    });
    run_criterion(&mut outcomes, 6, "denoising sanity", None, || {
        criterion_denoise_sanity(&suite)
    });
    run_criterion(&mut outcomes, 7, "deblurring round trip", Some(15 * 60), || {
        criterion_deblur(&mut suite)
    });
    run_criterion(&mut outcomes, 8, "ADMM convergence", None, || criterion_admm(&suite));
    run_criterion(&mut outcomes, 9, "brute-force equivalence", None, criterion_brute_force);

    let mut lines = Vec::new();
    for o in &outcomes {
        let (tag, detail) = match &o.result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        let budget = match o.budget {
            Some(b) => format!(", budget {:.0}s", b.as_secs_f64()),
            None => String::new(),
        };
        lines.push(format!(
            "[{tag}] criterion {}: {} ({:.1}s{budget}) — {detail}",
            o.id,
            o.name,
            o.elapsed.as_secs_f64()
        ));
    }
    let report = lines.join("\n");
    println!("{report}");
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    assert!(failed == 0, "{failed} acceptance criteria failed:\n{report}");
}
