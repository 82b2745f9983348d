#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sas_core::linalg::spectral_norm;
use sas_core::polymat::{monomials_up_to, MatrixPolynomial, ScalarPolynomial};
use sas_core::{BoundedSequence, Extension, LinearSystem, SasSystem};

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random polynomial with coefficient-norm sum `b` exactly.
pub fn poly_with_b(rng: &mut ChaCha8Rng, r: usize, c: usize, deg: usize, b: f64) -> MatrixPolynomial {
    let coeffs = (0..=deg).map(|_| uniform_matrix(rng, r, c)).collect();
    let p = MatrixPolynomial::new(r, c, coeffs).unwrap();
    let s = p.coefficient_norm_sum();
    p.scale(b / s)
}

pub fn random_sas(rng: &mut ChaCha8Rng, n: usize, dp: usize, dq: usize, bp: f64, bq: f64, eps: f64) -> SasSystem {
    let p = poly_with_b(rng, n, n, dp, bp);
    let q = poly_with_b(rng, n, 1, dq, bq);
    let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    SasSystem::new(p, q, w, eps).unwrap()
}

pub fn scalar_input(rng: &mut ChaCha8Rng, t: usize) -> BoundedSequence {
    let v: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..=1.0)).collect();
    BoundedSequence::scalar(&v, 1.0, Extension::Zero).unwrap()
}

/// Inputs in the closed ball of radius `m` in `R^d`.
pub fn vector_input(rng: &mut ChaCha8Rng, t: usize, d: usize, m: f64) -> BoundedSequence {
    let hw = m / (d as f64).sqrt();
    let window = (0..t).map(|_| (0..d).map(|_| rng.random_range(-hw..=hw)).collect()).collect();
    BoundedSequence::new(d, window, m, Extension::Zero).unwrap()
}

pub fn random_readout(rng: &mut ChaCha8Rng, n: usize, degree: u32) -> ScalarPolynomial {
    let mons = monomials_up_to(n, degree);
    let w: Vec<f64> = mons.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    ScalarPolynomial::from_monomials(n, &mons, &w).unwrap()
}

/// `σ_max(A) = sigma` exactly up to the norm estimate.
pub fn random_linear(rng: &mut ChaCha8Rng, n: usize, d: usize, sigma: f64, eps: f64) -> LinearSystem {
    let a = uniform_matrix(rng, n, n);
    let a = &a * (sigma / spectral_norm(&a));
    let c = uniform_matrix(rng, n, d);
    let h = random_readout(rng, n, 2);
    LinearSystem::new(a, c, h, eps).unwrap()
}

pub fn strictly_upper(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j > i { scale * rng.random_range(-1.0..1.0) } else { 0.0 })
}
