//! Sums and products of reservoir functionals, realised as new systems.
//!
//! For SAS systems the sum lives on `R^{N₁} ⊕ R^{N₂}` and the product on
//! `R^{N₁} ⊕ R^{N₂} ⊕ (R^{N₁} ⊗ R^{N₂})`, where the third block carries
//! `x¹_t ⊗ x²_t`.  Products are always recertified: the block lower
//! triangular `p` can have operator norm ≥ 1 even when both factors contract.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::polymat::{self, MatrixPolynomial, NormCertificate, ScalarPolynomial, DEFAULT_GRID_STEP};
use crate::reservoir::{LinearSystem, SasSystem, System, SystemDoc};
use crate::seqspace::BoundedSequence;

/// Finest grid step tried when recertifying a composed `p`.
pub const MIN_RECERT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionKind {
    SasSum,
    SasProduct,
    LinearSum,
    LinearProduct,
}

impl CompositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositionKind::SasSum => "sas_sum",
            CompositionKind::SasProduct => "sas_product",
            CompositionKind::LinearSum => "linear_sum",
            CompositionKind::LinearProduct => "linear_product",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComposedSystem {
    pub kind: CompositionKind,
    pub result: System,
    pub parents: [String; 2],
    pub lambda: Option<f64>,
    /// `min(ε₁, ε₂)`; the result's own margin can be smaller.
    pub theoretical_eps: f64,
    /// Third-block scaling of a balanced product, `1` otherwise.
    pub balance: f64,
}

impl ComposedSystem {
    pub fn sas(&self) -> Option<&SasSystem> {
        match &self.result {
            System::Sas(s) => Some(s),
            System::Linear(_) => None,
        }
    }

    pub fn linear(&self) -> Option<&LinearSystem> {
        match &self.result {
            System::Linear(l) => Some(l),
            System::Sas(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.result.dim()
    }

    /// System JSON with the parent fingerprints under `"parents"`.
    pub fn to_doc(&self) -> SystemDoc {
        let mut doc = self.result.to_doc();
        match &mut doc {
            SystemDoc::Sas { parents, .. } | SystemDoc::Linear { parents, .. } => {
                *parents = self.parents.to_vec();
            }
        }
        doc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }
}

fn sas_fingerprint(s: &SasSystem) -> String {
    System::Sas(s.clone()).fingerprint()
}

fn linear_fingerprint(s: &LinearSystem) -> String {
    System::Linear(s.clone()).fingerprint()
}

/// `H₁ + λ H₂` via `p₁ ⊕ p₂`, `q₁ ⊕ q₂`, `W₁ ⊕ λW₂`.
pub fn sas_add(s1: &SasSystem, s2: &SasSystem, lambda: f64) -> Result<ComposedSystem> {
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must be finite")));
    }
    let p = s1.p().direct_sum(s2.p());
    let q = MatrixPolynomial::vstack(&[s1.q(), s2.q()])?;
    let w = linalg::vstack_vec(&[s1.readout(), &(s2.readout() * lambda)]);
    let eps = s1.eps().min(s2.eps());
    // ‖p₁ ⊕ p₂‖ = max of the two norms, on every grid point.
    let c1 = s1.cert_p();
    let c2 = s2.cert_p();
    let cert_p = if c1.grid_step == c2.grid_step {
        NormCertificate {
            b_p: c1.b_p.max(c2.b_p),
            m_p_lower: c1.m_p_lower.max(c2.m_p_lower),
            m_p_upper: c1.m_p_upper.max(c2.m_p_upper),
            m_pprime: (p.rows() as f64).sqrt() * c1.derivative_sup.max(c2.derivative_sup),
            derivative_sup: c1.derivative_sup.max(c2.derivative_sup),
            grid_step: c1.grid_step,
        }
    } else {
        polymat::certify_below(&p, 1.0 - eps, c1.grid_step.min(c2.grid_step), MIN_RECERT_STEP)?
    };
    let cert_q = q.norm_certificate(DEFAULT_GRID_STEP)?;
    let result = SasSystem::from_parts(p, q, w, eps, cert_p, cert_q)?;
    Ok(ComposedSystem {
        kind: CompositionKind::SasSum,
        result: System::Sas(result),
        parents: [sas_fingerprint(s1), sas_fingerprint(s2)],
        lambda: Some(lambda),
        theoretical_eps: eps,
        balance: 1.0,
    })
}

/// Coefficient-wise `(v ↦ (a(z) v) ⊗ b(z))` for matrix `a` and column `b`.
fn kron_left(a: &MatrixPolynomial, b: &MatrixPolynomial) -> MatrixPolynomial {
    a.kron(b)
}

/// Coefficient-wise `(v ↦ b(z) ⊗ (a(z) v))` for column `b` and matrix `a`.
fn kron_right(b: &MatrixPolynomial, a: &MatrixPolynomial) -> MatrixPolynomial {
    b.kron(a)
}

/// Blocks of the product system before any balancing.
fn product_parts(s1: &SasSystem, s2: &SasSystem, alpha: f64) -> Result<(MatrixPolynomial, MatrixPolynomial, DVector<f64>)> {
    let (n1, n2) = (s1.dim(), s2.dim());
    let n12 = n1 * n2;
    let diag3 = s1.p().kron(s2.p());
    let off1 = kron_left(s1.p(), s2.q()).scale(alpha);
    let off2 = kron_right(s1.q(), s2.p()).scale(alpha);
    let p = MatrixPolynomial::from_blocks(
        &[n1, n2, n12],
        &[n1, n2, n12],
        &[(0, 0, s1.p()), (1, 1, s2.p()), (2, 0, &off1), (2, 1, &off2), (2, 2, &diag3)],
    )?;
    let q12 = s1.q().kron(s2.q()).scale(alpha);
    let q = MatrixPolynomial::vstack(&[s1.q(), s2.q(), &q12])?;
    let w12 = s1.readout().kronecker(s2.readout()) / alpha;
    let w = linalg::vstack_vec(&[&DVector::zeros(n1), &DVector::zeros(n2), &w12]);
    Ok((p, q, w))
}

fn finish_product(s1: &SasSystem, s2: &SasSystem, alpha: f64) -> Result<ComposedSystem> {
    let (p, q, w) = product_parts(s1, s2, alpha)?;
    let theory = s1.eps().min(s2.eps());
    let step = s1.cert_p().grid_step.min(s2.cert_p().grid_step);
    let cert_p = polymat::certify_below(&p, 1.0 - theory, step, MIN_RECERT_STEP)?;
    if !(cert_p.m_p_upper < 1.0) {
        return Err(Error::Recertification { certificate: Box::new(cert_p) });
    }
    // Keep the theoretical margin when it is certified, else halve the gap.
    let eps = if cert_p.m_p_upper < 1.0 - theory { theory } else { (1.0 - cert_p.m_p_upper) / 2.0 };
    let cert_q = q.norm_certificate(DEFAULT_GRID_STEP)?;
    let result = SasSystem::from_parts(p, q, w, eps, cert_p, cert_q)?;
    Ok(ComposedSystem {
        kind: CompositionKind::SasProduct,
        result: System::Sas(result),
        parents: [sas_fingerprint(s1), sas_fingerprint(s2)],
        lambda: None,
        theoretical_eps: theory,
        balance: alpha,
    })
}

/// `H₁ · H₂` with the block lower-triangular `p`, recertified on the grid.
pub fn sas_multiply(s1: &SasSystem, s2: &SasSystem) -> Result<ComposedSystem> {
    finish_product(s1, s2, 1.0)
}

/// `H₁ · H₂` realised in the coordinates `(x¹, x², α x¹⊗x²)`.
///
/// The off-diagonal blocks and `q₁⊗q₂` scale by `α`, the readout by `1/α`,
/// so the functional is unchanged.  With `D = max(K₁¹, K₁²)` and `Off` a
/// bound on the off-diagonal row, `α = (1 − D)/(2 Off)` gives
/// `M_p ≤ (1 + D)/2 < 1`.
pub fn sas_multiply_balanced(s1: &SasSystem, s2: &SasSystem) -> Result<ComposedSystem> {
    let d = s1.k1().max(s2.k1());
    let off = ((s1.k1() * s2.k2()).powi(2) + (s1.k2() * s2.k1()).powi(2)).sqrt();
    let alpha = if off == 0.0 { 1.0 } else { ((1.0 - d) / (2.0 * off)).min(1.0) };
    finish_product(s1, s2, alpha)
}

/// Degree of the product `p` predicted from the factors.
pub fn product_degree(s1: &SasSystem, s2: &SasSystem) -> usize {
    let (dp1, dq1) = (s1.p().degree(), s1.q().degree());
    let (dp2, dq2) = (s2.p().degree(), s2.q().degree());
    (dp1 + dq2).max(dq1 + dp2).max(dp1 + dp2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CombineMode {
    Sum(f64),
    Product,
}

/// `A₁ ⊕ A₂`, `c` stacked, readout `h₁ + λh₂` or `h₁ · h₂` on the split state.
pub fn linear_combine(s1: &LinearSystem, s2: &LinearSystem, mode: CombineMode) -> Result<ComposedSystem> {
    if s1.input_dim() != s2.input_dim() {
        return Err(Error::DimensionMismatch { expected: s1.input_dim(), found: s2.input_dim() });
    }
    let (n1, n2) = (s1.dim(), s2.dim());
    let n = n1 + n2;
    let a = linalg::direct_sum(s1.a(), s2.a());
    let c = linalg::vstack(&[s1.c(), s2.c()]);
    let h1 = s1.h().embed(0, n)?;
    let h2 = s2.h().embed(n1, n)?;
    let (h, kind, lambda) = match mode {
        CombineMode::Sum(l) => (h1.add(&h2.scale(l))?, CompositionKind::LinearSum, Some(l)),
        CombineMode::Product => (h1.mul(&h2)?, CompositionKind::LinearProduct, None),
    };
    let eps = s1.eps().min(s2.eps());
    let result = LinearSystem::new(a, c, h, eps)?;
    Ok(ComposedSystem {
        kind,
        result: System::Linear(result),
        parents: [linear_fingerprint(s1), linear_fingerprint(s2)],
        lambda,
        theoretical_eps: eps,
        balance: 1.0,
    })
}

// -- generic runners ---------------------------------------------------------

/// A state-space filter `x_t = F(x_{t−1}, z_t)`, `y_t = h(x_t)`.
pub trait Runner {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, z: &[f64]) -> DVector<f64>;
    fn output(&self, x: &DVector<f64>) -> Result<f64>;
    fn validate(&self, z: &BoundedSequence) -> Result<()>;

    /// Outputs along the window from the zero state.
    fn run(&self, z: &BoundedSequence) -> Result<Vec<f64>> {
        self.validate(z)?;
        let mut x = DVector::zeros(self.state_dim());
        z.window()
            .iter()
            .map(|u| {
                x = self.step(&x, u);
                self.output(&x)
            })
            .collect()
    }
}

impl Runner for SasSystem {
    fn state_dim(&self) -> usize {
        self.dim()
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn step(&self, x: &DVector<f64>, z: &[f64]) -> DVector<f64> {
        self.p().eval(z[0]) * x + self.q().eval_vector(z[0])
    }
    fn output(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.readout().dot(x))
    }
    fn validate(&self, z: &BoundedSequence) -> Result<()> {
        self.validate_input(z)
    }
}

impl Runner for LinearSystem {
    fn state_dim(&self) -> usize {
        self.dim()
    }
    fn input_dim(&self) -> usize {
        LinearSystem::input_dim(self)
    }
    fn step(&self, x: &DVector<f64>, z: &[f64]) -> DVector<f64> {
        self.a() * x + self.c() * DVector::from_column_slice(z)
    }
    fn output(&self, x: &DVector<f64>) -> Result<f64> {
        self.h().eval(x.as_slice())
    }
    fn validate(&self, z: &BoundedSequence) -> Result<()> {
        self.validate_input(z)
    }
}

/// `F((x₁, x₂), z) = (F₁(x₁, z), F₂(x₂, z))` with output `combiner(y¹, y²)`.
pub struct ParallelRunner<A, B> {
    first: A,
    second: B,
    combiner: ScalarPolynomial,
}

pub fn generic_parallel_compose<A: Runner, B: Runner>(
    first: A,
    second: B,
    combiner: ScalarPolynomial,
) -> Result<ParallelRunner<A, B>> {
    if combiner.arity() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: combiner.arity() });
    }
    if first.input_dim() != second.input_dim() {
        return Err(Error::DimensionMismatch { expected: first.input_dim(), found: second.input_dim() });
    }
    Ok(ParallelRunner { first, second, combiner })
}

impl<A: Runner, B: Runner> ParallelRunner<A, B> {
    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n1 = self.first.state_dim();
        (x.rows(0, n1).into_owned(), x.rows(n1, self.second.state_dim()).into_owned())
    }
}

impl<A: Runner, B: Runner> Runner for ParallelRunner<A, B> {
    fn state_dim(&self) -> usize {
        self.first.state_dim() + self.second.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.first.input_dim()
    }
    fn step(&self, x: &DVector<f64>, z: &[f64]) -> DVector<f64> {
        let (x1, x2) = self.split(x);
        linalg::vstack_vec(&[&self.first.step(&x1, z), &self.second.step(&x2, z)])
    }
    fn output(&self, x: &DVector<f64>) -> Result<f64> {
        let (x1, x2) = self.split(x);
        self.combiner.eval(&[self.first.output(&x1)?, self.second.output(&x2)?])
    }
    fn validate(&self, z: &BoundedSequence) -> Result<()> {
        self.first.validate(z)?;
        self.second.validate(z)
    }
}

/// Constant SAS system with `H ≡ value` on `N = 1`.
pub fn constant_sas(value: f64, eps: f64) -> Result<SasSystem> {
    SasSystem::new(
        MatrixPolynomial::zero(1, 1),
        MatrixPolynomial::constant(DMatrix::from_element(1, 1, 1.0)),
        DVector::from_element(1, value),
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqspace::Extension;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(rng: &mut ChaCha8Rng, r: usize, c: usize, deg: usize, target: f64) -> MatrixPolynomial {
        let coeffs = (0..=deg).map(|_| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))).collect();
        let p = MatrixPolynomial::new(r, c, coeffs).unwrap();
        let b = p.coefficient_norm_sum();
        p.scale(target / b)
    }

    fn sas(rng: &mut ChaCha8Rng, n: usize, dp: usize, dq: usize, bp: f64, bq: f64) -> SasSystem {
        let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        SasSystem::new(poly(rng, n, n, dp, bp), poly(rng, n, 1, dq, bq), w, 0.05).unwrap()
    }

    fn input(rng: &mut ChaCha8Rng, t: usize) -> BoundedSequence {
        let v: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..=1.0)).collect();
        BoundedSequence::scalar(&v, 1.0, Extension::Zero).unwrap()
    }

    #[test]
    fn sum_with_zero_lambda_is_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (sas(&mut rng, 2, 1, 1, 0.6, 0.6), sas(&mut rng, 3, 2, 1, 0.6, 0.6));
        let c = sas_add(&a, &b, 0.0).unwrap();
        assert_eq!(c.dim(), 5);
        let z = input(&mut rng, 80);
        let tol = 1e-13;
        assert_eq!(c.sas().unwrap().sas_functional(&z, tol).unwrap(), a.sas_functional(&z, tol).unwrap());
        let d = sas_add(&a, &a, 1.0).unwrap();
        let two = 2.0 * a.sas_functional(&z, tol).unwrap();
        assert!((d.sas().unwrap().sas_functional(&z, tol).unwrap() - two).abs() < 1e-14);
    }

    #[test]
    fn multiply_by_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = sas(&mut rng, 2, 1, 1, 0.5, 0.3);
        let one = constant_sas(1.0, 0.05).unwrap();
        let c = sas_multiply(&a, &one).unwrap();
        assert_eq!(c.dim(), 2 + 1 + 2);
        for _ in 0..5 {
            let z = input(&mut rng, 100);
            let lhs = c.sas().unwrap().sas_functional(&z, 1e-13).unwrap();
            let rhs = a.sas_functional(&z, 1e-13).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn product_of_constants() {
        let a = constant_sas(0.5, 0.1).unwrap();
        let b = constant_sas(-3.0, 0.2).unwrap();
        let c = sas_multiply(&a, &b).unwrap();
        let z = BoundedSequence::scalar(&[0.2, -0.7], 1.0, Extension::Zero).unwrap();
        assert!((c.sas().unwrap().sas_functional(&z, 1e-12).unwrap() + 1.5).abs() < 1e-15);
        assert_eq!(c.theoretical_eps, 0.1);
    }

    #[test]
    fn balanced_and_literal_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sas(&mut rng, 2, 1, 2, 0.5, 0.2);
        let b = sas(&mut rng, 2, 2, 1, 0.4, 0.2);
        let lit = sas_multiply(&a, &b).unwrap();
        let bal = sas_multiply_balanced(&a, &b).unwrap();
        for _ in 0..5 {
            let z = input(&mut rng, 150);
            let prod = a.sas_functional(&z, 1e-14).unwrap() * b.sas_functional(&z, 1e-14).unwrap();
            for c in [&lit, &bal] {
                assert!((c.sas().unwrap().sas_functional(&z, 1e-14).unwrap() - prod).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn balanced_product_survives_large_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = sas(&mut rng, 3, 1, 1, 0.8, 0.9);
        let b = sas(&mut rng, 3, 1, 1, 0.8, 0.9);
        let bal = sas_multiply_balanced(&a, &b).unwrap();
        assert!(bal.sas().unwrap().k1() < 1.0 - bal.theoretical_eps);
        assert!(bal.balance < 1.0);
    }

    #[test]
    fn literal_product_reports_failed_recertification() {
        // p_i = 0.9 constant, q_i = 1: the off-diagonal row has norm ≈ 1.27.
        let mk = || {
            SasSystem::new(
                MatrixPolynomial::constant(DMatrix::from_element(1, 1, 0.9)),
                MatrixPolynomial::constant(DMatrix::from_element(1, 1, 1.0)),
                DVector::from_element(1, 1.0),
                0.05,
            )
            .unwrap()
        };
        match sas_multiply(&mk(), &mk()) {
            Err(Error::Recertification { certificate }) => assert!(certificate.m_p_upper >= 1.0),
            other => panic!("expected recertification failure, got {other:?}"),
        }
    }

    #[test]
    fn degree_law_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (dp1, dq1, dp2, dq2) in [(1, 1, 1, 1), (2, 1, 1, 3), (0, 2, 3, 0), (1, 0, 0, 2)] {
            let a = sas(&mut rng, 2, dp1, dq1, 0.3, 0.2);
            let b = sas(&mut rng, 2, dp2, dq2, 0.3, 0.2);
            let c = sas_multiply_balanced(&a, &b).unwrap();
            assert_eq!(c.sas().unwrap().p().degree(), product_degree(&a, &b));
        }
    }

    #[test]
    fn nilpotent_factors_give_nilpotent_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let strict = |rng: &mut ChaCha8Rng, n: usize| {
            let j = DMatrix::from_fn(n, n, |i, k| if k > i { rng.random_range(-1.0..1.0) } else { 0.0 });
            let j = &j * (0.5 / linalg::spectral_norm(&j));
            MatrixPolynomial::new(n, n, vec![DMatrix::zeros(n, n), j]).unwrap()
        };
        let a = SasSystem::new(strict(&mut rng, 2), poly(&mut rng, 2, 1, 1, 0.3), DVector::from_element(2, 1.0), 0.05).unwrap();
        let b = SasSystem::new(strict(&mut rng, 3), poly(&mut rng, 3, 1, 1, 0.3), DVector::from_element(3, 1.0), 0.05).unwrap();
        let c = sas_multiply_balanced(&a, &b).unwrap();
        let n = c.dim();
        let rep = c.sas().unwrap().p().is_nilpotent(n, 1e-12).unwrap();
        assert!(rep.nilpotent);
    }

    #[test]
    fn linear_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a1 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.4..0.4));
        let a2 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.5, 0.1]));
        let s1 = LinearSystem::new(a1, DMatrix::from_element(2, 1, 0.5), ScalarPolynomial::linear(&[1.0, -1.0]), 0.1).unwrap();
        let s2 = LinearSystem::new(a2, DMatrix::from_element(3, 1, 1.0), ScalarPolynomial::coordinate(3, 1), 0.2).unwrap();
        let one = LinearSystem::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), ScalarPolynomial::constant(1, 1.0), 0.2).unwrap();
        let z = input(&mut rng, 200);
        let h1 = s1.functional(&z, 1e-13).unwrap();
        let h2 = s2.functional(&z, 1e-13).unwrap();
        let prod = linear_combine(&s1, &s2, CombineMode::Product).unwrap();
        assert_eq!(prod.dim(), 5);
        assert!((prod.linear().unwrap().functional(&z, 1e-13).unwrap() - h1 * h2).abs() < 1e-12);
        let id = linear_combine(&s1, &one, CombineMode::Product).unwrap();
        assert!((id.linear().unwrap().functional(&z, 1e-13).unwrap() - h1).abs() < 1e-13);
        let zero = linear_combine(&s1, &s1, CombineMode::Sum(-1.0)).unwrap();
        assert_eq!(zero.linear().unwrap().functional(&z, 1e-13).unwrap(), 0.0);
        assert_eq!(zero.theoretical_eps, 0.1);
        let diag = linear_combine(&s2, &s2, CombineMode::Sum(1.0)).unwrap();
        assert!(diag.linear().unwrap().is_diagonal());
    }

    #[test]
    fn linear_combine_rejects_mismatched_inputs() {
        let s1 = LinearSystem::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), ScalarPolynomial::zero(1), 0.1).unwrap();
        let s2 = LinearSystem::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 2), ScalarPolynomial::zero(1), 0.1).unwrap();
        assert!(linear_combine(&s1, &s2, CombineMode::Product).is_err());
    }

    #[test]
    fn nilpotent_sum_stays_nilpotent() {
        let sh = |n| LinearSystem::new(linalg::upper_shift(n), DMatrix::identity(n, 1), ScalarPolynomial::coordinate(n, 0), 0.1).unwrap();
        let c = linear_combine(&sh(2), &sh(3), CombineMode::Sum(1.0)).unwrap();
        assert_eq!(c.linear().unwrap().nilpotent_index(), Some(3));
    }

    #[test]
    fn parallel_runner_combiners() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = sas(&mut rng, 2, 1, 1, 0.5, 0.3);
        let b = sas(&mut rng, 2, 1, 1, 0.5, 0.3);
        let z = input(&mut rng, 60);
        let ya = a.run(&z).unwrap();
        let yb = b.run(&z).unwrap();
        let first = generic_parallel_compose(a.clone(), b.clone(), ScalarPolynomial::coordinate(2, 0)).unwrap();
        assert_eq!(first.run(&z).unwrap(), ya);
        let mut uv = ScalarPolynomial::zero(2);
        uv.add_term(vec![1, 1], 1.0).unwrap();
        let sq = generic_parallel_compose(a.clone(), a.clone(), uv.clone()).unwrap();
        for (s, y) in sq.run(&z).unwrap().iter().zip(&ya) {
            assert!((s - y * y).abs() < 1e-15);
        }
        let prod = sas_multiply(&a, &b).unwrap();
        let yp = prod.sas().unwrap().run(&z).unwrap();
        let yg = generic_parallel_compose(a, b, uv).unwrap().run(&z).unwrap();
        for ((p, g), (u, v)) in yp.iter().zip(&yg).zip(ya.iter().zip(&yb)) {
            assert!((p - g).abs() < 1e-12);
            assert!((g - u * v).abs() < 1e-15);
        }
    }

    #[test]
    fn parents_are_exported() {
        let a = constant_sas(1.0, 0.1).unwrap();
        let c = sas_add(&a, &a, 2.0).unwrap();
        let json = c.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["parents"].as_array().unwrap().len(), 2);
        assert_eq!(v["kind"], "sas");
        let back = System::from_json(&json).unwrap();
        assert_eq!(back.dim(), 2);
    }
}
