//! Oracles and fixtures shared by the integration targets.
#![allow(dead_code)]

use deep_esn::linalg;
use deep_esn::reservoir::{ReservoirLayer, ReservoirParams};
use deep_esn::seed::rng;
use nalgebra::DMatrix;
use rand::Rng;

pub fn params(size: usize, input_dim: usize, sr: f64, leak: f64, seed: u64) -> ReservoirParams {
    ReservoirParams {
        size,
        input_dim,
        input_scaling: 0.6,
        spectral_radius: sr,
        leak_rate: leak,
        sparsity: 0.2,
        seed,
    }
}

/// Random layer whose recurrent matrix has largest singular value `sigma`.
pub fn contractive_layer(size: usize, sigma: f64, leak: f64, seed: u64) -> ReservoirLayer {
    let mut r = rng(seed);
    let w = DMatrix::from_fn(size, size, |_, _| r.random_range(-1.0..1.0));
    let w = &w * (sigma / linalg::max_singular_value(&w));
    let w_in = DMatrix::from_fn(size, 1, |_, _| r.random_range(-0.5..0.5));
    ReservoirLayer::from_weights(params(size, 1, 0.5, leak, seed), w_in, w).unwrap()
}

pub fn random_state(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// log of the spectral radius by repeated squaring with renormalisation:
/// `rho = lim ||W^k||^(1/k)`.
pub fn gelfand_radius(w: &DMatrix<f64>) -> f64 {
    let mut b = w.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..40 {
        let n = b.norm();
        b /= n;
        log_scale += n.ln() / power;
        b = &b * &b;
        power *= 2.0;
    }
    (log_scale + b.norm().ln() / power).exp()
}

/// Gauss-Jordan elimination with partial pivoting on row-major vectors.
pub fn gauss_jordan_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().chain(rb).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                if f != 0.0 {
                    for k in 0..n + m {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}
