//! Operator sanity: the identities the solver relies on, checked on random
//! inputs — adjointness of the directional nonlocal Jacobian, the
//! divergence/gradient pairing, singular-value shrinkage of the proximal
//! map, circular convolution via FFT, and the degeneration that ties the
//! directional regularizer back to its undirected form.

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use nladstv::image::{luminance, ImageField};
use nladstv::jacobian::{
    apply_jacobian, apply_jacobian_adjoint, regularizer_value, singular_values_2xk,
    DirectionField, RegularizerMode, SchattenOrder,
};
use nladstv::linops::{div, grad, gaussian_kernel, ForwardModel};
use nladstv::nlweights::{build_weight_graph, PatchConfig};
use nladstv::proxsolve::prox_schatten;
use nladstv::Result;

fn random_image(w: usize, h: usize, c: usize, seed: u64) -> ImageField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * c).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImageField::from_data(w, h, c, data).unwrap()
}

fn main() -> Result<()> {
    let img = random_image(14, 12, 3, 5);
    let cfg = PatchConfig {
        patch_size: 3,
        window_size: 7,
        rho: 0.75,
        beta: 0.1,
        neighbors: 6,
    };
    // The graph is built from a single-channel guide; luminance collapses the
    // RGB test image while the Jacobian itself still runs on all channels.
    let guide = luminance(&img)?;
    let graph = build_weight_graph(&guide, &cfg)?;
    let dirs = DirectionField {
        width: img.width,
        height: img.height,
        theta: (0..img.width * img.height)
            .map(|i| (i as f64 * 0.37) % std::f64::consts::PI)
            .collect(),
        alpha_minor: (0..img.width * img.height)
            .map(|i| 1.0 + 3.0 * ((i % 7) as f64 / 6.0))
            .collect(),
        alpha_plus: 4.0,
    };
    let mode = RegularizerMode::Nladstv {
        graph: graph.clone(),
        dirs,
    };

    // <J f, X> == <f, J* X> for random X: the identity the ADMM inner solve
    // and every dual update lean on
    let jf = apply_jacobian(&img, &mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut x = jf.clone();
    for v in &mut x.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    let lhs = jf.dot(&x);
    let back = apply_jacobian_adjoint(&x, &mode)?;
    let rhs = img.dot(&back);
    let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
    println!("adjoint identity     rel err {rel:.2e}");
    assert!(rel < 1e-12);

    // div == -grad^T, exactly
    let f = random_image(9, 8, 1, 6);
    let mut v = grad(&f);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in v.dx.iter_mut().chain(v.dy.iter_mut()) {
        *d = rng.gen_range(-1.0..1.0);
    }
    let g = grad(&f);
    let lhs = g
        .dx
        .iter()
        .zip(&v.dx)
        .chain(g.dy.iter().zip(&v.dy))
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let rhs = -f.dot(&div(&v));
    println!("div = -grad^T        abs err {:.2e}", (lhs - rhs).abs());
    assert!((lhs - rhs).abs() < 1e-12);

    // prox of the nuclear norm shrinks each singular value by lambda
    let block: Vec<f64> = (0..12).map(|i| ((i * i) as f64).sin()).collect();
    let (s1, s2) = singular_values_2xk(&block);
    let lambda = 0.3 * s2;
    let shrunk = prox_schatten(&block, lambda, SchattenOrder::One)?;
    let (t1, t2) = singular_values_2xk(&shrunk);
    println!(
        "nuclear prox         sigma ({s1:.3}, {s2:.3}) -> ({t1:.3}, {t2:.3}), lambda {lambda:.3}"
    );
    assert!((t1 - (s1 - lambda)).abs() < 1e-10 && (t2 - (s2 - lambda)).abs() < 1e-10);

    // constant rotations and alpha- = alpha+ = a reduce the directional
    // regularizer to a times the undirected one
    let uniform = RegularizerMode::Nladstv {
        graph: graph.clone(),
        dirs: DirectionField::uniform(img.width, img.height, 0.9, 4.0, 4.0),
    };
    let plain = RegularizerMode::Nlstv { graph };
    let a = regularizer_value(&img, &uniform, SchattenOrder::One)?;
    let b = regularizer_value(&img, &plain, SchattenOrder::One)?;
    println!("degeneration         nladstv/nlstv = {:.12} (want 4)", a / b);
    assert!((a / b - 4.0).abs() < 1e-10);

    // circular convolution via FFT matches a direct wrap-around sum
    let kernel = gaussian_kernel(5, 1.0)?;
    let model = ForwardModel::Convolution(kernel.clone());
    let small = random_image(8, 7, 1, 8);
    let fast = model.apply(&small);
    let mut direct = ImageField::new(8, 7, 1);
    for y in 0..7i32 {
        for x in 0..8i32 {
            let mut acc = 0.0;
            for dy in -2..=2i32 {
                for dx in -2..=2i32 {
                    let sx = (x - dx).rem_euclid(8) as usize;
                    let sy = (y - dy).rem_euclid(7) as usize;
                    acc += kernel.tap(dx, dy) * small.get(sx, sy, 0);
                }
            }
            direct.set(x as usize, y as usize, 0, acc);
        }
    }
    let err = fast.max_abs_diff(&direct);
    println!("fft convolution      max err {err:.2e}");
    assert!(err < 1e-12);

    println!("all operator checks passed");
    Ok(())
}
