//! State-affine (SAS) and linear reservoir systems.
//!
//! A SAS system evolves as `x_t = p(z_t) x_{t−1} + q(z_t)` with scalar
//! inputs `z_t ∈ [-1, 1]` and reads out `y_t = Wᵀ x_t`.  When
//! `M_p = max_{z∈I} ‖p(z)‖₂ < 1` the state has the closed form
//!
//! ```text
//! x_t = Σ_{j≥0} p(z_t)⋯p(z_{t−j+1}) q(z_{t−j})
//! ```
//!
//! and both routes are available here: the recursion (what a reservoir
//! actually runs) and the truncated series with a certified tail.  Linear
//! systems `x_t = A x_{t−1} + c z_t`, `y_t = h(x_t)` get the same treatment.
//!
//! All tail and washout bounds use the certified upper bounds `K₁ = M_p`
//! upper and `K₂ = M_q` upper, never grid lower bounds.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::polymat::{
    self, MatrixPolynomial, NormCertificate, PolyDoc, ScalarPolynomial, DEFAULT_GRID_STEP,
    NILPOTENT_EXACT_TOL, NILPOTENT_FLOAT_TOL,
};
use crate::seqspace::{BoundedSequence, WeightingSequence};

/// Number of steps after which the tail formula stops shrinking in `f64`.
const MAX_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SasSystem {
    p: MatrixPolynomial,
    q: MatrixPolynomial,
    w: DVector<f64>,
    eps: f64,
    cert_p: NormCertificate,
    cert_q: NormCertificate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// One state per window entry, oldest first.
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<f64>,
    /// Leading entries that have not yet forgotten the initial state.
    pub washout_len: usize,
    /// Bound on the distance of post-washout states from the exact solution.
    pub truncation_tail_bound: f64,
}

impl Trajectory {
    /// Columns `t,x_1..x_N,y` with `t` running from `−(T−1)` to `0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.push("y".into());
        w.write_record(&header)?;
        let len = self.states.len() as i64;
        for (i, (x, y)) in self.states.iter().zip(&self.outputs).enumerate() {
            let mut rec = vec![(i as i64 - (len - 1)).to_string()];
            rec.extend(x.iter().map(|v| format!("{v:?}")));
            rec.push(format!("{y:?}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `|H(z) − H(s)| ≤ constant · ‖z − s‖_weighting`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmpModulus {
    pub constant: f64,
    pub weighting: WeightingSequence,
}

/// Distance to the echo-state boundary.
pub trait EspMargin {
    fn esp_margin(&self) -> f64;
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("margin ε = {eps} must lie in (0,1)")))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")))
    }
}

/// Smallest `J` with `scale · rate^{J+1} / (1 − rate) < tol`.
pub fn geometric_terms(scale: f64, rate: f64, tol: f64) -> usize {
    if scale == 0.0 || rate == 0.0 {
        return 0;
    }
    let tail = |j: usize| scale * rate.powi(j as i32 + 1) / (1.0 - rate);
    // Closed-form guess, then fix up against the exact predicate.
    let guess = ((tol * (1.0 - rate) / scale).ln() / rate.ln() - 1.0).ceil();
    let mut j = if guess.is_finite() && guess > 0.0 { (guess as usize).min(MAX_TERMS) } else { 0 };
    while j > 0 && tail(j - 1) < tol {
        j -= 1;
    }
    while tail(j) >= tol && j < MAX_TERMS {
        j += 1;
    }
    j
}

impl SasSystem {
    pub fn new(p: MatrixPolynomial, q: MatrixPolynomial, w: DVector<f64>, eps: f64) -> Result<Self> {
        Self::with_grid_step(p, q, w, eps, DEFAULT_GRID_STEP)
    }

    pub fn with_grid_step(
        p: MatrixPolynomial,
        q: MatrixPolynomial,
        w: DVector<f64>,
        eps: f64,
        grid_step: f64,
    ) -> Result<Self> {
        check_eps(eps)?;
        Self::check_shapes(&p, &q, &w)?;
        let cert_p = polymat::certify_below(&p, 1.0 - eps, grid_step, 1e-4)?;
        let cert_q = q.norm_certificate(grid_step)?;
        Self::from_parts(p, q, w, eps, cert_p, cert_q)
    }

    /// Build from precomputed certificates; the echo-state check still runs.
    pub fn from_parts(
        p: MatrixPolynomial,
        q: MatrixPolynomial,
        w: DVector<f64>,
        eps: f64,
        cert_p: NormCertificate,
        cert_q: NormCertificate,
    ) -> Result<Self> {
        check_eps(eps)?;
        Self::check_shapes(&p, &q, &w)?;
        if !(cert_p.m_p_upper < 1.0 - eps) {
            return Err(Error::NotContractive { upper: cert_p.m_p_upper, limit: 1.0 - eps });
        }
        Ok(Self { p, q, w, eps, cert_p, cert_q })
    }

    fn check_shapes(p: &MatrixPolynomial, q: &MatrixPolynomial, w: &DVector<f64>) -> Result<()> {
        let n = p.rows();
        if !p.is_square() {
            return Err(Error::ShapeMismatch(format!("p must be square, got {:?}", p.shape())));
        }
        if q.shape() != (n, 1) {
            return Err(Error::ShapeMismatch(format!("q must be {n}×1, got {:?}", q.shape())));
        }
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: w.len() });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }
    pub fn p(&self) -> &MatrixPolynomial {
        &self.p
    }
    pub fn q(&self) -> &MatrixPolynomial {
        &self.q
    }
    pub fn readout(&self) -> &DVector<f64> {
        &self.w
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn cert_p(&self) -> &NormCertificate {
        &self.cert_p
    }
    pub fn cert_q(&self) -> &NormCertificate {
        &self.cert_q
    }

    /// Same reservoir, different readout.
    pub fn with_readout(&self, w: DVector<f64>) -> Result<Self> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: w.len() });
        }
        Ok(Self { w, ..self.clone() })
    }

    /// Contraction constant `K₁`.
    pub fn k1(&self) -> f64 {
        self.cert_p.m_p_upper
    }
    /// `K₂ ≥ max_{z∈I} ‖q(z)‖`.
    pub fn k2(&self) -> f64 {
        self.cert_q.m_p_upper
    }

    /// `K₂ / (1 − K₁)`: every state of the exact solution lies in this ball.
    pub fn state_bound(&self) -> f64 {
        self.k2() / (1.0 - self.k1())
    }

    /// Smallest `T` with `(1−ε)^T · 2 · state_bound < tol`.
    pub fn default_washout(&self, tol: f64) -> usize {
        let sb = 2.0 * self.state_bound();
        if sb < tol {
            return 0;
        }
        let rate = 1.0 - self.eps;
        ((tol / sb).ln() / rate.ln()).floor() as usize + 1
    }

    /// Number of series terms `J` (sum over `j = 0..=J`) for tolerance `tol`.
    pub fn series_terms(&self, tol: f64) -> usize {
        geometric_terms(self.k2(), self.k1(), tol)
    }

    pub fn validate_input(&self, z: &BoundedSequence) -> Result<()> {
        validate_sas_input(z)
    }

    pub fn sas_run_recursion(
        &self,
        z: &BoundedSequence,
        x_init: Option<&DVector<f64>>,
        washout: usize,
    ) -> Result<Trajectory> {
        self.validate_input(z)?;
        let n = self.dim();
        let mut x = match x_init {
            Some(x0) => {
                if x0.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
                }
                x0.clone()
            }
            None => DVector::zeros(n),
        };
        let cap = self.state_bound() + 1.0;
        if x.norm() > cap {
            return Err(Error::InvalidParameter(format!(
                "initial state norm {} exceeds the sanity cap {cap}",
                x.norm()
            )));
        }
        let start_gap = x.norm() + self.state_bound();
        let mut states = Vec::with_capacity(z.len());
        let mut outputs = Vec::with_capacity(z.len());
        for row in z.window() {
            let u = row[0];
            x = self.p.eval(u) * &x + self.q.eval_vector(u);
            outputs.push(self.w.dot(&x));
            states.push(x.clone());
        }
        Ok(Trajectory {
            states,
            outputs,
            washout_len: washout.min(z.len()),
            truncation_tail_bound: self.k1().powi(washout as i32) * start_gap,
        })
    }

    /// Series state at lag `lag` (time `t = −lag`), truncated after `terms`.
    ///
    /// Evaluated in nested form `q₀ + p₀(q₁ + p₁(q₂ + ⋯))`, which is the same
    /// finite sum at `O(J N²)` cost.
    fn series_state_with(&self, z: &BoundedSequence, lag: usize, terms: usize) -> DVector<f64> {
        let mut x = self.q.eval_vector(z.scalar_at(lag + terms));
        for j in (0..terms).rev() {
            let u = z.scalar_at(lag + j);
            x = self.p.eval(u) * x + self.q.eval_vector(u);
        }
        x
    }

    /// Same sum with explicit products `P_j = p(z_t)⋯p(z_{t−j+1})`.
    pub fn series_state_products(&self, z: &BoundedSequence, lag: usize, tol: f64) -> Result<DVector<f64>> {
        check_tol(tol)?;
        self.validate_input(z)?;
        let terms = self.series_terms(tol);
        let n = self.dim();
        let mut prod = DMatrix::<f64>::identity(n, n);
        let mut x = self.q.eval_vector(z.scalar_at(lag));
        for j in 1..=terms {
            prod *= self.p.eval(z.scalar_at(lag + j - 1));
            x += &prod * self.q.eval_vector(z.scalar_at(lag + j));
        }
        Ok(x)
    }

    pub fn series_state(&self, z: &BoundedSequence, lag: usize, tol: f64) -> Result<DVector<f64>> {
        check_tol(tol)?;
        self.validate_input(z)?;
        Ok(self.series_state_with(z, lag, self.series_terms(tol)))
    }

    pub fn sas_run_series(&self, z: &BoundedSequence, tol: f64) -> Result<Trajectory> {
        check_tol(tol)?;
        self.validate_input(z)?;
        let terms = self.series_terms(tol);
        let states: Vec<DVector<f64>> =
            (0..z.len()).map(|pos| self.series_state_with(z, z.lag_of(pos), terms)).collect();
        let outputs = states.iter().map(|x| self.w.dot(x)).collect();
        Ok(Trajectory {
            states,
            outputs,
            washout_len: 0,
            truncation_tail_bound: self.series_tail(terms),
        })
    }

    /// `K₂ K₁^{J+1} / (1 − K₁)`.
    pub fn series_tail(&self, terms: usize) -> f64 {
        if self.k2() == 0.0 || self.k1() == 0.0 {
            return 0.0;
        }
        self.k2() * self.k1().powi(terms as i32 + 1) / (1.0 - self.k1())
    }

    /// `H(z) = Wᵀ x₀`; the truncation error is at most `‖W‖ · tol`.
    pub fn sas_functional(&self, z: &BoundedSequence, tol: f64) -> Result<f64> {
        Ok(self.w.dot(&self.series_state(z, 0, tol)?))
    }

    /// Fading-memory modulus with respect to `w_t = M_p^{ρt}`.
    ///
    /// With `a_j = p(z₀)⋯p(z₋ⱼ₊₁)` the functional difference splits into
    /// `Σ ‖a_j(z)‖ ‖q(z₋ⱼ) − q(s₋ⱼ)‖ + Σ ‖a_j(z) − a_j(s)‖ ‖q(s₋ⱼ)‖`; the first
    /// sum carries the Lipschitz constant `L_q` of `q` and the second the
    /// bound `K₂` on `‖q‖`, giving
    /// `C = ‖W‖ (L_q + K₂ M_{p′}/(M_p(1−M_p))) / (1 − M_p^{1−ρ})`.
    pub fn fmp_lipschitz_constant(&self, rho: f64) -> Result<FmpModulus> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("ρ = {rho} must lie in (0,1)")));
        }
        let w_norm = self.w.norm();
        let l_q = self.cert_q.m_pprime;
        let m_p = self.k1();
        if m_p == 0.0 {
            // p ≡ 0: H(z) = Wᵀq(z₀) depends on the present input only, so
            // any weighting with w₀ = 1 works.
            return Ok(FmpModulus {
                constant: w_norm * l_q,
                weighting: WeightingSequence::Exponential { lambda: 0.5 },
            });
        }
        let mix = self.k2() * self.cert_p.m_pprime / (m_p * (1.0 - m_p));
        let constant = w_norm * (l_q + mix) / (1.0 - m_p.powf(1.0 - rho));
        Ok(FmpModulus { constant, weighting: WeightingSequence::ExponentialPower { lambda: m_p, rho } })
    }
}

impl EspMargin for SasSystem {
    fn esp_margin(&self) -> f64 {
        1.0 - self.k1()
    }
}

pub fn validate_sas_input(z: &BoundedSequence) -> Result<()> {
    if z.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: z.dim() });
    }
    for (i, row) in z.window().iter().enumerate() {
        let u = row[0];
        if !(-1.0..=1.0).contains(&u) {
            return Err(Error::BoundViolation {
                index: i,
                reason: format!("SAS inputs must lie in [-1, 1], found {u}"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    h: ScalarPolynomial,
    eps: f64,
    sigma_a: f64,
    sigma_c: f64,
    diagonal: bool,
    nilpotent_index: Option<usize>,
}

impl LinearSystem {
    /// Requires `σ_max(A) < 1 − ε`, unless `A` is nilpotent: then the state
    /// is a finite sum and the echo state property holds regardless.
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, h: ScalarPolynomial, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::ShapeMismatch(format!("A must be square and nonempty, got {:?}", a.shape())));
        }
        if c.nrows() != n || c.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!("c must be {n}×n, got {:?}", c.shape())));
        }
        if h.arity() != n {
            return Err(Error::DimensionMismatch { expected: n, found: h.arity() });
        }
        let sigma_a = spectral_norm(&a);
        let sigma_c = spectral_norm(&c);
        let nilpotent_index = linalg::nilpotency_index(&a, n, NILPOTENT_EXACT_TOL)
            .or_else(|| linalg::nilpotency_index(&a, n, NILPOTENT_FLOAT_TOL));
        if !(sigma_a < 1.0 - eps) && nilpotent_index.is_none() {
            return Err(Error::NotContractive { upper: sigma_a, limit: 1.0 - eps });
        }
        let diagonal = linalg::is_diagonal(&a);
        Ok(Self { a, c, h, eps, sigma_a, sigma_c, diagonal, nilpotent_index })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.c.ncols()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn h(&self) -> &ScalarPolynomial {
        &self.h
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn sigma_a(&self) -> f64 {
        self.sigma_a
    }
    pub fn sigma_c(&self) -> f64 {
        self.sigma_c
    }
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }
    pub fn nilpotent_index(&self) -> Option<usize> {
        self.nilpotent_index
    }

    pub fn with_readout(&self, h: ScalarPolynomial) -> Result<Self> {
        if h.arity() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: h.arity() });
        }
        Ok(Self { h, ..self.clone() })
    }

    pub fn validate_input(&self, z: &BoundedSequence) -> Result<()> {
        if z.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: z.dim() });
        }
        Ok(())
    }

    /// Bound on `‖x_t‖` for inputs bounded by `m`.
    pub fn state_bound(&self, m: f64) -> f64 {
        match self.nilpotent_index {
            Some(k) if !(self.sigma_a < 1.0) => {
                m * self.sigma_c * (0..k).map(|i| self.sigma_a.powi(i as i32)).sum::<f64>()
            }
            _ => m * self.sigma_c / (1.0 - self.sigma_a),
        }
    }

    /// Highest power `J` kept in `Σ_{i=0}^{J} A^i c z_{t−i}`, and the tail.
    pub fn truncation(&self, m: f64, tol: f64) -> Result<(usize, f64)> {
        if let Some(k) = self.nilpotent_index {
            return Ok((k - 1, 0.0));
        }
        check_tol(tol)?;
        let scale = m * self.sigma_c;
        let j = geometric_terms(scale, self.sigma_a, tol);
        let tail = if scale == 0.0 || self.sigma_a == 0.0 {
            0.0
        } else {
            scale * self.sigma_a.powi(j as i32 + 1) / (1.0 - self.sigma_a)
        };
        Ok((j, tail))
    }

    /// `[c, Ac, …, A^J c]`.
    fn impulse_blocks(&self, terms: usize) -> Vec<DMatrix<f64>> {
        let mut blocks = Vec::with_capacity(terms + 1);
        let mut g = self.c.clone();
        for _ in 0..terms {
            let next = &self.a * &g;
            blocks.push(g);
            g = next;
        }
        blocks.push(g);
        blocks
    }

    fn state_from_blocks(&self, blocks: &[DMatrix<f64>], z: &BoundedSequence, lag: usize) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        for (i, g) in blocks.iter().enumerate() {
            let u = DVector::from_column_slice(z.get(lag + i));
            x += g * u;
        }
        x
    }

    pub fn linear_state(&self, z: &BoundedSequence, lag: usize, tol: f64) -> Result<DVector<f64>> {
        self.validate_input(z)?;
        let (j, _) = self.truncation(z.bound(), tol)?;
        Ok(self.state_from_blocks(&self.impulse_blocks(j), z, lag))
    }

    /// Closed-form state `Σ A^i c z_{t−i}` at every window position.
    pub fn linear_run(&self, z: &BoundedSequence, tol: f64) -> Result<Trajectory> {
        self.validate_input(z)?;
        let (j, tail) = self.truncation(z.bound(), tol)?;
        let blocks = self.impulse_blocks(j);
        let states: Vec<DVector<f64>> =
            (0..z.len()).map(|pos| self.state_from_blocks(&blocks, z, z.lag_of(pos))).collect();
        let outputs = states
            .iter()
            .map(|x| self.h.eval(x.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory { states, outputs, washout_len: 0, truncation_tail_bound: tail })
    }

    /// `x_t = A x_{t−1} + c z_t` from `x_init` (default 0).
    pub fn linear_run_recursion(
        &self,
        z: &BoundedSequence,
        x_init: Option<&DVector<f64>>,
        washout: usize,
    ) -> Result<Trajectory> {
        self.validate_input(z)?;
        let mut x = x_init.cloned().unwrap_or_else(|| DVector::zeros(self.dim()));
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        let gap = x.norm() + self.state_bound(z.bound());
        let mut states = Vec::with_capacity(z.len());
        let mut outputs = Vec::with_capacity(z.len());
        for row in z.window() {
            x = &self.a * &x + &self.c * DVector::from_column_slice(row);
            outputs.push(self.h.eval(x.as_slice())?);
            states.push(x.clone());
        }
        let tail = match self.nilpotent_index {
            Some(k) if washout >= k => 0.0,
            _ => self.sigma_a.powi(washout as i32) * gap,
        };
        Ok(Trajectory { states, outputs, washout_len: washout.min(z.len()), truncation_tail_bound: tail })
    }

    pub fn functional(&self, z: &BoundedSequence, tol: f64) -> Result<f64> {
        let x = self.linear_state(z, 0, tol)?;
        self.h.eval(x.as_slice())
    }
}

impl EspMargin for LinearSystem {
    /// `1 − σ_max(A)`; may be ≤ 0 for nilpotent `A`, whose echo state
    /// property comes from finite memory instead of contraction.
    fn esp_margin(&self) -> f64 {
        1.0 - self.sigma_a
    }
}

// -- JSON --------------------------------------------------------------------

/// `{"kind":"sas","p":…,"q":…,"W":[…],"eps":…}` or the linear analogue with
/// `A`, `c` stored as degree-zero polynomials and `h` as a scalar polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemDoc {
    Sas {
        p: PolyDoc,
        q: PolyDoc,
        #[serde(rename = "W")]
        w: Vec<f64>,
        eps: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid_step: Option<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        parents: Vec<String>,
    },
    Linear {
        #[serde(rename = "A")]
        a: PolyDoc,
        c: PolyDoc,
        h: ScalarPolynomial,
        eps: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        parents: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Sas(SasSystem),
    Linear(LinearSystem),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Sas(s) => s.dim(),
            System::Linear(l) => l.dim(),
        }
    }

    pub fn to_doc(&self) -> SystemDoc {
        match self {
            System::Sas(s) => SystemDoc::Sas {
                p: s.p.clone().into(),
                q: s.q.clone().into(),
                w: s.w.iter().copied().collect(),
                eps: s.eps,
                grid_step: Some(s.cert_p.grid_step),
                parents: Vec::new(),
            },
            System::Linear(l) => SystemDoc::Linear {
                a: MatrixPolynomial::constant(l.a.clone()).into(),
                c: MatrixPolynomial::constant(l.c.clone()).into(),
                h: l.h.clone(),
                eps: l.eps,
                parents: Vec::new(),
            },
        }
    }

    pub fn from_doc(doc: SystemDoc) -> Result<Self> {
        match doc {
            SystemDoc::Sas { p, q, w, eps, grid_step, .. } => {
                let p = MatrixPolynomial::try_from(p)?;
                let q = MatrixPolynomial::try_from(q)?;
                let s = SasSystem::with_grid_step(
                    p,
                    q,
                    DVector::from_vec(w),
                    eps,
                    grid_step.unwrap_or(DEFAULT_GRID_STEP),
                )?;
                Ok(System::Sas(s))
            }
            SystemDoc::Linear { a, c, h, eps, .. } => {
                let (ra, ca) = (a.rows, a.cols);
                let (rc, cc) = (c.rows, c.cols);
                let a = MatrixPolynomial::try_from(a)?;
                let c = MatrixPolynomial::try_from(c)?;
                if a.degree() > 0 || c.degree() > 0 {
                    return Err(Error::Parse("linear system matrices must be constant".into()));
                }
                let a = if a.is_zero() { DMatrix::zeros(ra, ca) } else { a.coeff(0) };
                let c = if c.is_zero() { DMatrix::zeros(rc, cc) } else { c.coeff(0) };
                Ok(System::Linear(LinearSystem::new(a, c, h, eps)?))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }

    /// Content identifier: first 16 hex digits of SHA-256 of the compact JSON.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.to_doc()).expect("system docs serialize");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

impl EspMargin for System {
    fn esp_margin(&self) -> f64 {
        match self {
            System::Sas(s) => s.esp_margin(),
            System::Linear(l) => l.esp_margin(),
        }
    }
}
