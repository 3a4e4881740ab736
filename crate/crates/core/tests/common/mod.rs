//! Checks shared by the gradient tests and the acceptance run.
#![allow(dead_code)]

use formnet::net::{
    build_unet, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, loss_gradient, NetworkParams,
    Tensor, UNetConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose finite differences straddle a ReLU kink.
    pub skipped: usize,
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Compares the analytic loss gradient of a tiny 64-bit U-Net (depth 1,
/// two base channels, 8x8 input) with central differences.
///
/// For a single parameter the network is piecewise linear, so the loss is
/// piecewise quadratic and central differences are exact up to rounding.
/// Biases are randomized so that no activation sits exactly on a ReLU
/// kink; a parameter whose step still crosses one shows up as a mismatch
/// between step sizes `h` and `2h` and is skipped.
pub fn finite_difference_check(seed: u64) -> GradCheck {
    let cfg = UNetConfig::new(8, 1, 1, 2);
    let mut params: NetworkParams<f64> = build_unet(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Zero biases put dead channels exactly on a ReLU kink.
    for layer in 0..params.layers().len() {
        for b in params.bias_mut(layer) {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    let x = random_tensor([2, 1, 8, 8], &mut rng);
    let y = random_tensor([2, 1, 8, 8], &mut rng);
    let lambda = 0.004;
    let (_, grad) = loss_gradient(&params, &x, &y, lambda).unwrap();
    let loss_at = |i: usize, delta: f64| {
        let mut p = params.clone();
        p.values_mut()[i] += delta;
        loss_gradient(&p, &x, &y, lambda).unwrap().0
    };
    let h = 1e-5;
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, &analytic) in grad.iter().enumerate() {
        let d1 = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h);
        let d2 = (loss_at(i, 2.0 * h) - loss_at(i, -2.0 * h)) / (4.0 * h);
        if (d1 - d2).abs() > 1e-7 * (1.0 + d1.abs()) {
            out.skipped += 1;
            continue;
        }
        let err = if analytic.abs() < 1e-8 {
            (analytic - d1).abs()
        } else {
            (analytic - d1).abs() / analytic.abs().max(d1.abs())
        };
        out.max_rel_error = out.max_rel_error.max(err);
        out.checked += 1;
    }
    out
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest relative violation of `<A x, y> = <x, A^T y>` over the layer
/// pairs of the network: strided and same-padded convolutions against their
/// input gradients, and a stride-2 2x2 convolution against the transposed
/// convolution sharing its weights.
pub fn adjoint_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut record = |lhs: f64, rhs: f64| {
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    };
    for (k, stride) in [(3, 1), (3, 2), (1, 1), (2, 2)] {
        let x = random_tensor([2, 3, 12, 12], &mut rng);
        let w = random_tensor([4, 3, k, k], &mut rng);
        let zero = vec![0.0; 4];
        let ax = conv2d(&x, &w, &zero, stride).unwrap();
        let y = random_tensor(ax.shape(), &mut rng);
        let aty = conv2d_backward(&x, &w, stride, &y).unwrap().input;
        record(dot(&ax, &y), dot(&x, &aty));
    }
    // Transposed convolution and its own input gradient.
    let x = random_tensor([2, 4, 6, 6], &mut rng);
    let w = random_tensor([4, 3, 2, 2], &mut rng);
    let ax = conv_transpose2d(&x, &w, &[0.0; 3], 2).unwrap();
    let y = random_tensor(ax.shape(), &mut rng);
    let aty = conv_transpose2d_backward(&x, &w, 2, &y).unwrap().input;
    record(dot(&ax, &y), dot(&x, &aty));
    // The stride-2 2x2 convolution and the transposed one share weights.
    let u = random_tensor([2, 3, 12, 12], &mut rng);
    let v = random_tensor([2, 4, 6, 6], &mut rng);
    let down = conv2d(&u, &w, &[0.0; 4], 2).unwrap();
    let up = conv_transpose2d(&v, &w, &[0.0; 3], 2).unwrap();
    record(dot(&down, &v), dot(&u, &up));
    worst
}
