//! Matrix-valued polynomials `p(z) = A₀ + zA₁ + … + z^r A_r` and scalar
//! multivariate polynomials used as readouts.
//!
//! Everything a state-affine reservoir needs from its polynomials lives
//! here: evaluation, the direct-sum and Kronecker constructions used by the
//! filter algebra, symbolic powers for nilpotency, and certified bounds on
//! `max_{z∈[-1,1]} ‖p(z)‖₂`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};

/// Default grid spacing used when a system certifies its own polynomials.
pub const DEFAULT_GRID_STEP: f64 = 1e-2;

/// Zero tolerance for nilpotency of exactly constructed coefficients.
pub const NILPOTENT_EXACT_TOL: f64 = 0.0;
/// Zero tolerance for nilpotency of general floating-point coefficients.
pub const NILPOTENT_FLOAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyDoc", into = "PolyDoc")]
pub struct MatrixPolynomial {
    rows: usize,
    cols: usize,
    coeffs: Vec<DMatrix<f64>>,
}

/// Wire format: `{"rows":m,"cols":n,"coeffs":[[..row-major..],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyDoc {
    pub rows: usize,
    pub cols: usize,
    pub coeffs: Vec<Vec<f64>>,
}

impl TryFrom<PolyDoc> for MatrixPolynomial {
    type Error = Error;
    fn try_from(doc: PolyDoc) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(doc.coeffs.len());
        for (i, c) in doc.coeffs.into_iter().enumerate() {
            if c.len() != doc.rows * doc.cols {
                return Err(Error::ShapeMismatch(format!(
                    "coefficient {i} has {} entries, expected {}×{}",
                    c.len(),
                    doc.rows,
                    doc.cols
                )));
            }
            coeffs.push(DMatrix::from_row_slice(doc.rows, doc.cols, &c));
        }
        MatrixPolynomial::new(doc.rows, doc.cols, coeffs)
    }
}

impl From<MatrixPolynomial> for PolyDoc {
    fn from(p: MatrixPolynomial) -> Self {
        let coeffs = p
            .coeffs
            .iter()
            .map(|a| a.transpose().iter().copied().collect())
            .collect();
        PolyDoc { rows: p.rows, cols: p.cols, coeffs }
    }
}

impl MatrixPolynomial {
    pub fn new(rows: usize, cols: usize, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        for (i, a) in coeffs.iter().enumerate() {
            if a.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch(format!(
                    "coefficient {i} is {}×{}, expected {rows}×{cols}",
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        let mut p = Self { rows, cols, coeffs };
        p.strip();
        Ok(p)
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self { rows, cols, coeffs: Vec::new() }
    }

    pub fn constant(a: DMatrix<f64>) -> Self {
        let (rows, cols) = a.shape();
        let mut p = Self { rows, cols, coeffs: vec![a] };
        p.strip();
        p
    }

    /// Column polynomial from vector coefficients.
    pub fn from_vectors(coeffs: Vec<DVector<f64>>, rows: usize) -> Result<Self> {
        let mats = coeffs
            .into_iter()
            .map(|v| {
                let n = v.len();
                DMatrix::from_column_slice(n, 1, v.as_slice())
            })
            .collect();
        Self::new(rows, 1, mats)
    }

    fn strip(&mut self) {
        while self.coeffs.last().is_some_and(|a| a.iter().all(|&x| x == 0.0)) {
            self.coeffs.pop();
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }
    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
    /// Index of the last nonzero coefficient; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Coefficient of `z^i` (zero past the degree).
    pub fn coeff(&self, i: usize) -> DMatrix<f64> {
        self.coeffs.get(i).cloned().unwrap_or_else(|| DMatrix::zeros(self.rows, self.cols))
    }

    /// Horner evaluation.
    pub fn eval(&self, z: f64) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for a in self.coeffs.iter().rev() {
            acc *= z;
            acc += a;
        }
        acc
    }

    /// Column polynomials evaluate to a vector.
    pub fn eval_vector(&self, z: f64) -> DVector<f64> {
        debug_assert_eq!(self.cols, 1);
        let m = self.eval(z);
        DVector::from_column_slice(m.as_slice())
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut p = Self {
            rows: self.rows,
            cols: self.cols,
            coeffs: self.coeffs.iter().map(|a| a * factor).collect(),
        };
        p.strip();
        p
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch("add: shapes differ".into()));
        }
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len).map(|i| self.coeff(i) + other.coeff(i)).collect();
        Self::new(self.rows, self.cols, coeffs)
    }

    /// Coefficient convolution; `eval(a·b, z) = eval(a, z)·eval(b, z)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}×{} by {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        if self.is_zero() || other.is_zero() {
            return Ok(Self::zero(self.rows, other.cols));
        }
        let mut coeffs = vec![DMatrix::zeros(self.rows, other.cols); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Self::new(self.rows, other.cols, coeffs)
    }

    /// Coefficient-wise block diagonal `p₁ ⊕ p₂`, shorter list zero-padded.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|i| linalg::direct_sum(&self.coeff(i), &other.coeff(i)))
            .collect();
        let mut p = Self { rows: self.rows + other.rows, cols: self.cols + other.cols, coeffs };
        p.strip();
        p
    }

    /// `p₁ ⊗ p₂ = Σ_{i,j} z^{i+j} A_i¹ ⊗ A_j²`.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        if self.is_zero() || other.is_zero() {
            return Self::zero(rows, cols);
        }
        let mut coeffs = vec![DMatrix::zeros(rows, cols); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a.kronecker(b);
            }
        }
        let mut p = Self { rows, cols, coeffs };
        p.strip();
        p
    }

    /// Vertical concatenation (all parts share the column count).
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::ShapeMismatch("vstack: column counts differ".into()));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let len = parts.iter().map(|p| p.coeffs.len()).max().unwrap_or(0);
        let coeffs = (0..len)
            .map(|i| {
                let blocks: Vec<DMatrix<f64>> = parts.iter().map(|p| p.coeff(i)).collect();
                let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
                linalg::vstack(&refs)
            })
            .collect();
        Self::new(rows, cols, coeffs)
    }

    /// Assemble a block matrix polynomial; unspecified blocks are zero.
    pub fn from_blocks(
        row_dims: &[usize],
        col_dims: &[usize],
        blocks: &[(usize, usize, &Self)],
    ) -> Result<Self> {
        let row_off: Vec<usize> = offsets(row_dims);
        let col_off: Vec<usize> = offsets(col_dims);
        let rows = row_dims.iter().sum();
        let cols = col_dims.iter().sum();
        let len = blocks.iter().map(|b| b.2.coeffs.len()).max().unwrap_or(0);
        let mut coeffs = vec![DMatrix::zeros(rows, cols); len];
        for &(bi, bj, p) in blocks {
            if p.shape() != (row_dims[bi], col_dims[bj]) {
                return Err(Error::ShapeMismatch(format!(
                    "block ({bi},{bj}) is {}×{}, expected {}×{}",
                    p.rows, p.cols, row_dims[bi], col_dims[bj]
                )));
            }
            for (d, a) in p.coeffs.iter().enumerate() {
                coeffs[d].view_mut((row_off[bi], col_off[bj]), a.shape()).copy_from(a);
            }
        }
        Self::new(rows, cols, coeffs)
    }

    /// Term-by-term derivative.
    pub fn derivative(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, a)| a * i as f64)
            .collect();
        let mut p = Self { rows: self.rows, cols: self.cols, coeffs };
        p.strip();
        p
    }

    /// `B_p = Σ ‖A_i‖₂`, an upper bound for `‖p(z)‖₂` on `[-1, 1]`.
    pub fn coefficient_norm_sum(&self) -> f64 {
        self.coeffs.iter().map(spectral_norm).sum()
    }

    pub fn norm_certificate(&self, grid_step: f64) -> Result<NormCertificate> {
        norm_certificate(self, grid_step)
    }

    pub fn check_conditions(&self, lambda: f64) -> Result<ConditionReport> {
        check_conditions(self, lambda, DEFAULT_GRID_STEP)
    }

    pub fn is_nilpotent(&self, max_index: usize, zero_tol: f64) -> Result<NilpotencyReport> {
        is_nilpotent(self, max_index, zero_tol)
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

/// Certified information about `z ↦ ‖p(z)‖₂` on `I = [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormCertificate {
    /// Coefficient-norm sum; always an upper bound for `M_p`.
    pub b_p: f64,
    /// Grid maximum of `‖p(z)‖₂`.
    pub m_p_lower: f64,
    /// Certified upper bound for `M_p`.
    pub m_p_upper: f64,
    /// `√rows · sup_z ‖p′(z)‖₂` (upper estimate).
    pub m_pprime: f64,
    /// Certified upper bound for `sup_z ‖p′(z)‖₂`.
    pub derivative_sup: f64,
    pub grid_step: f64,
}

impl NormCertificate {
    pub fn zero(grid_step: f64) -> Self {
        Self {
            b_p: 0.0,
            m_p_lower: 0.0,
            m_p_upper: 0.0,
            m_pprime: 0.0,
            derivative_sup: 0.0,
            grid_step,
        }
    }
}

/// Points `2k/K − 1`, `k = 0..=K`, `K = ⌈2/h⌉`.  Written as a ratio of
/// integers so that refining `h` by an integer factor reproduces the coarse
/// points exactly.
pub fn grid(grid_step: f64) -> Vec<f64> {
    let k = (2.0 / grid_step).ceil() as usize;
    (0..=k).map(|i| (2 * i) as f64 / k as f64 - 1.0).collect()
}

fn grid_max(p: &MatrixPolynomial, points: &[f64]) -> f64 {
    if p.is_zero() {
        return 0.0;
    }
    points
        .par_iter()
        .map(|&z| spectral_norm(&p.eval(z)))
        .reduce(|| 0.0, f64::max)
}

/// Grid lower bound plus mean-value slack for `M_p`, capped by `B_p`.
///
/// Every grid point is within `h/2` of any `z ∈ I` and
/// `‖p(z) − p(s)‖₂ ≤ sup‖p′‖₂ |z − s|`, so the grid max plus `h/2·sup‖p′‖₂`
/// bounds `M_p`.  `sup‖p′‖₂` itself is bounded by its grid max plus
/// `h/2·B_{p″}` (or by `B_{p′}`, whichever is smaller), which closes the
/// recursion with a coefficient bound instead of a third grid.
pub fn norm_certificate(p: &MatrixPolynomial, grid_step: f64) -> Result<NormCertificate> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidParameter(format!("grid step {grid_step} must lie in (0, 1]")));
    }
    if p.is_zero() {
        return Ok(NormCertificate::zero(grid_step));
    }
    let points = grid(grid_step);
    let half = grid_step / 2.0;

    let b_p = p.coefficient_norm_sum();
    let lower = grid_max(p, &points);

    let dp = p.derivative();
    let derivative_sup = if dp.is_zero() {
        0.0
    } else {
        let b_dp = dp.coefficient_norm_sum();
        let b_ddp = dp.derivative().coefficient_norm_sum();
        b_dp.min(grid_max(&dp, &points) + half * b_ddp)
    };
    let upper = b_p.min(lower + half * derivative_sup).max(lower);

    Ok(NormCertificate {
        b_p,
        m_p_lower: lower,
        m_p_upper: upper,
        m_pprime: (p.rows as f64).sqrt() * derivative_sup,
        derivative_sup,
        grid_step,
    })
}

/// Refine the grid until `M_p_upper < target` or the step reaches `min_step`.
pub fn certify_below(
    p: &MatrixPolynomial,
    target: f64,
    initial_step: f64,
    min_step: f64,
) -> Result<NormCertificate> {
    let mut step = initial_step;
    loop {
        let cert = norm_certificate(p, step)?;
        if cert.m_p_upper < target || step / 10.0 < min_step {
            return Ok(cert);
        }
        step /= 10.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// All `‖A_i‖₂ < λ` and `λ(r + 1) < 1`.
    pub cond_i: bool,
    /// `B_p < 1`.
    pub cond_ii: bool,
    /// Certified `M_p < 1`.
    pub cond_iii: bool,
    pub certificate: NormCertificate,
}

pub fn check_conditions(p: &MatrixPolynomial, lambda: f64, grid_step: f64) -> Result<ConditionReport> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must lie in (0,1)")));
    }
    let certificate = norm_certificate(p, grid_step)?;
    let cond_i = p.coeffs.iter().all(|a| spectral_norm(a) < lambda)
        && (lambda * (p.degree() + 1) as f64) < 1.0;
    let cond_ii = certificate.b_p < 1.0;
    let cond_iii = certificate.m_p_upper < 1.0;
    Ok(ConditionReport { cond_i, cond_ii, cond_iii, certificate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NilpotencyReport {
    pub nilpotent: bool,
    pub index: Option<usize>,
}

/// Symbolic powers `p, p², …` until one vanishes identically.
pub fn is_nilpotent(p: &MatrixPolynomial, max_index: usize, zero_tol: f64) -> Result<NilpotencyReport> {
    if !p.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "nilpotency needs a square polynomial, got {}×{}",
            p.rows, p.cols
        )));
    }
    if max_index == 0 {
        return Err(Error::InvalidParameter("max_index must be ≥ 1".into()));
    }
    let vanishes = |q: &MatrixPolynomial| q.coeffs.iter().all(|a| a.iter().all(|x| x.abs() <= zero_tol));
    let mut power = p.clone();
    for k in 1..=max_index {
        if vanishes(&power) {
            return Ok(NilpotencyReport { nilpotent: true, index: Some(k) });
        }
        if k < max_index {
            power = power.mul(p)?;
        }
    }
    Ok(NilpotencyReport { nilpotent: false, index: None })
}

// ---------------------------------------------------------------------------

/// Real polynomial in `arity` variables, `Σ c_α x^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalarPolyDoc", into = "ScalarPolyDoc")]
pub struct ScalarPolynomial {
    arity: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarPolyDoc {
    pub arity: usize,
    pub terms: Vec<TermDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermDoc {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl TryFrom<ScalarPolyDoc> for ScalarPolynomial {
    type Error = Error;
    fn try_from(doc: ScalarPolyDoc) -> Result<Self> {
        let mut h = ScalarPolynomial::zero(doc.arity);
        for t in doc.terms {
            h.add_term(t.exponents, t.coeff)?;
        }
        Ok(h)
    }
}

impl From<ScalarPolynomial> for ScalarPolyDoc {
    fn from(h: ScalarPolynomial) -> Self {
        ScalarPolyDoc {
            arity: h.arity,
            terms: h
                .terms
                .into_iter()
                .map(|(exponents, coeff)| TermDoc { exponents, coeff })
                .collect(),
        }
    }
}

impl ScalarPolynomial {
    pub fn zero(arity: usize) -> Self {
        Self { arity, terms: BTreeMap::new() }
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        let mut h = Self::zero(arity);
        h.add_term(vec![0; arity], c).expect("arity matches");
        h
    }

    /// `h(x) = x_i` (0-based `i`).
    pub fn coordinate(arity: usize, i: usize) -> Self {
        let mut e = vec![0; arity];
        e[i] = 1;
        let mut h = Self::zero(arity);
        h.add_term(e, 1.0).expect("arity matches");
        h
    }

    /// Linear form `Σ w_i x_i`.
    pub fn linear(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut h = Self::zero(n);
        for (i, &w) in weights.iter().enumerate() {
            let mut e = vec![0; n];
            e[i] = 1;
            h.add_term(e, w).expect("arity matches");
        }
        h
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coeff: f64) -> Result<()> {
        if exponents.len() != self.arity {
            return Err(Error::DimensionMismatch { expected: self.arity, found: exponents.len() });
        }
        let entry = self.terms.entry(exponents).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.terms.retain(|_, c| *c != 0.0);
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.arity
    }
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }
    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }
    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arity {
            return Err(Error::DimensionMismatch { expected: self.arity, found: x.len() });
        }
        Ok(self.terms.iter().map(|(e, c)| c * monomial(e, x)).sum())
    }

    pub fn scale(&self, f: f64) -> Self {
        let mut h = Self::zero(self.arity);
        for (e, c) in &self.terms {
            h.add_term(e.clone(), c * f).expect("same arity");
        }
        h
    }

    /// Place `self` on the coordinates `offset..offset+arity` of an
    /// `ambient`-variable space.
    pub fn embed(&self, offset: usize, ambient: usize) -> Result<Self> {
        if offset + self.arity > ambient {
            return Err(Error::InvalidParameter("embedding exceeds ambient arity".into()));
        }
        let mut h = Self::zero(ambient);
        for (e, c) in &self.terms {
            let mut big = vec![0; ambient];
            big[offset..offset + self.arity].copy_from_slice(e);
            h.add_term(big, *c)?;
        }
        Ok(h)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.arity != other.arity {
            return Err(Error::DimensionMismatch { expected: self.arity, found: other.arity });
        }
        let mut h = self.clone();
        for (e, c) in &other.terms {
            h.add_term(e.clone(), *c)?;
        }
        Ok(h)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.arity != other.arity {
            return Err(Error::DimensionMismatch { expected: self.arity, found: other.arity });
        }
        let mut h = Self::zero(self.arity);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                h.add_term(e, c1 * c2)?;
            }
        }
        Ok(h)
    }

    /// Weighted sum of the given monomials.
    pub fn from_monomials(arity: usize, monomials: &[Vec<u32>], weights: &[f64]) -> Result<Self> {
        if monomials.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: monomials.len(), found: weights.len() });
        }
        let mut h = Self::zero(arity);
        for (e, &w) in monomials.iter().zip(weights) {
            h.add_term(e.clone(), w)?;
        }
        Ok(h)
    }
}

pub fn monomial(exponents: &[u32], x: &[f64]) -> f64 {
    exponents
        .iter()
        .zip(x)
        .filter(|(e, _)| **e > 0)
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

/// All exponent vectors of total degree `≤ degree`, graded, constant first.
pub fn monomials_up_to(arity: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(arity: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == arity {
            if left == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(arity, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree {
        rec(arity, d, &mut Vec::with_capacity(arity), &mut out);
    }
    out
}
