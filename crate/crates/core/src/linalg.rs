//! Dense helpers shared by the polynomial and reservoir code.
//!
//! Spectral norms are computed with a power iteration on the Gram matrix
//! (`AᵀA` or `AAᵀ`, whichever is smaller).  The iteration is run from a few
//! fixed start vectors so that results are reproducible bit-for-bit; the
//! largest estimate wins.  Every Rayleigh quotient is a lower bound on
//! `σ_max²`; iteration stops once the eigen-residual `‖Gv − λv‖` drops below
//! `POWER_TOL · λ`, which bounds the eigenvalue error by `residual² / gap`.

use nalgebra::{DMatrix, DVector};

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest singular value of `a`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.nrows() == 1 || a.ncols() == 1 {
        return a.norm();
    }
    let gram = if a.nrows() >= a.ncols() {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    let n = gram.nrows();

    let mut starts = Vec::with_capacity(3);
    starts.push(DVector::from_element(n, 1.0));
    starts.push(DVector::from_fn(n, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as f64 / n as f64)
    }));
    let heaviest = (0..n)
        .max_by(|&i, &j| gram[(i, i)].total_cmp(&gram[(j, j)]))
        .unwrap_or(0);
    let mut e = DVector::zeros(n);
    e[heaviest] = 1.0;
    starts.push(e);

    starts
        .into_iter()
        .map(|v| power_iteration(&gram, v))
        .fold(0.0, f64::max)
        .sqrt()
}

fn power_iteration(gram: &DMatrix<f64>, start: DVector<f64>) -> f64 {
    let norm = start.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut v = start / norm;
    let mut estimate = 0.0_f64;
    for _ in 0..POWER_MAX_ITER {
        let w = gram * &v;
        // Rayleigh quotient of a unit vector: never exceeds λ_max.
        let rayleigh = v.dot(&w);
        estimate = estimate.max(rayleigh);
        let residual = (&w - &v * rayleigh).norm();
        let next = w.norm();
        if next == 0.0 || residual <= POWER_TOL * rayleigh.abs() {
            break;
        }
        v = w / next;
    }
    estimate
}

/// Block-diagonal matrix `a ⊕ b`.
pub fn direct_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// Vertical concatenation; both blocks must have the same number of columns.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn vstack_vec(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Order-`n` upper shift: ones on the first superdiagonal.
pub fn upper_shift(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

pub fn is_diagonal(a: &DMatrix<f64>) -> bool {
    a.is_square()
        && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == 0.0))
}

/// Smallest `k ≤ max_index` with `A^k = 0` entrywise (|entry| ≤ `zero_tol`).
pub fn nilpotency_index(a: &DMatrix<f64>, max_index: usize, zero_tol: f64) -> Option<usize> {
    if !a.is_square() {
        return None;
    }
    let mut power = a.clone();
    for k in 1..=max_index {
        if power.iter().all(|x| x.abs() <= zero_tol) {
            return Some(k);
        }
        power = &power * a;
    }
    None
}
