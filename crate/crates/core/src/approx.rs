//! Readout training, empirical sup errors and separation witnesses.
//!
//! Reservoirs are drawn at random from one of five families and kept fixed;
//! only the readout is fitted, by ridge regression on terminal states (SAS)
//! or on monomials of the terminal state (linear).  Reported sup errors are
//! maxima over finite input sets and hence lower bounds on the true sup norm
//! over all admissible inputs.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::polymat::{monomial, monomials_up_to, MatrixPolynomial, ScalarPolynomial};
use crate::reservoir::{LinearSystem, SasSystem, System, SystemDoc};
use crate::seqspace::BoundedSequence;
use crate::stochastic::{self, Generator};

/// Candidate coefficients are scaled to this fraction of `1 − ε`.
pub const CANDIDATE_SCALE: f64 = 0.95;
/// `λ_reg = 0` is refused when `cond(XᵀX)` reaches this.
pub const MAX_CONDITION: f64 = 1e12;
pub const DIAGONAL_GRID_POINTS: usize = 4001;
pub const WITNESS_TOL: f64 = 1e-12;

/// A causal, time-invariant functional `H`.
pub trait Functional: Send + Sync {
    fn evaluate(&self, z: &BoundedSequence) -> Result<f64>;
}

/// `H` on every input, with errors tagged by input index.
pub fn evaluate_all(f: &dyn Functional, inputs: &[BoundedSequence]) -> Result<Vec<f64>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, z)| f.evaluate(z).map_err(|e| tag(i, e)))
        .collect()
}

fn tag(index: usize, e: Error) -> Error {
    match e {
        Error::InadmissibleInput { .. } => e,
        other => Error::InadmissibleInput { index, reason: other.to_string() },
    }
}

// -- targets -----------------------------------------------------------------

/// Homogeneous kernels of orders `1..=K` on the last `memory` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volterra {
    pub memory: usize,
    pub constant: f64,
    /// `kernels[k−1]` has `memory^k` entries, first lag slowest.
    pub kernels: Vec<Vec<f64>>,
}

impl Volterra {
    pub fn new(memory: usize, constant: f64, kernels: Vec<Vec<f64>>) -> Result<Self> {
        if memory == 0 || kernels.len() > 3 {
            return Err(Error::InvalidParameter("Volterra needs memory ≥ 1 and order ≤ 3".into()));
        }
        for (k, ker) in kernels.iter().enumerate() {
            if ker.len() != memory.pow(k as u32 + 1) {
                return Err(Error::ShapeMismatch(format!(
                    "order-{} kernel must have {} entries, got {}",
                    k + 1,
                    memory.pow(k as u32 + 1),
                    ker.len()
                )));
            }
        }
        Ok(Self { memory, constant, kernels })
    }

    /// Gaussian kernels damped by `2^{−(lag sum)/2}`, each scaled to unit ℓ¹ norm.
    pub fn random(order: usize, memory: usize, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidParameter(format!("Volterra order {order} must be 1, 2 or 3")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = (1..=order)
            .map(|k| {
                let len = memory.pow(k as u32);
                let mut ker: Vec<f64> = (0..len)
                    .map(|idx| {
                        let lag_sum: usize = lags(idx, k, memory).iter().sum();
                        let g: f64 = rng.sample(StandardNormal);
                        g * 0.5f64.powf(lag_sum as f64 / 2.0)
                    })
                    .collect();
                let l1: f64 = ker.iter().map(|v| v.abs()).sum();
                ker.iter_mut().for_each(|v| *v /= l1);
                ker
            })
            .collect();
        Self::new(memory, 0.0, kernels)
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        let mut y = self.constant;
        for (k, ker) in self.kernels.iter().enumerate() {
            for (idx, c) in ker.iter().enumerate() {
                if *c != 0.0 {
                    y += c * lags(idx, k + 1, self.memory).iter().map(|&l| u[l]).product::<f64>();
                }
            }
        }
        y
    }
}

fn lags(mut idx: usize, order: usize, memory: usize) -> Vec<usize> {
    let mut out = vec![0; order];
    for slot in out.iter_mut().rev() {
        *slot = idx % memory;
        idx /= memory;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetFilter {
    LinearIir { system: LinearSystem, bound: f64, tol: f64 },
    FiniteVolterra { kernels: Volterra, bound: f64 },
    TanhOfLinear { system: LinearSystem, gain: f64, bound: f64, tol: f64 },
    /// `y_t = clip(Σ a_i y_{t−i} + Σ_{j≥0} b_j z_{t−j}, ±clip)` run over the window.
    BoundedArma { ar: Vec<f64>, ma: Vec<f64>, clip: f64, bound: f64 },
    Sas { system: SasSystem, tol: f64 },
    Constant { value: f64, dim: usize },
}

impl TargetFilter {
    pub fn input_dim(&self) -> usize {
        match self {
            TargetFilter::LinearIir { system, .. } | TargetFilter::TanhOfLinear { system, .. } => system.input_dim(),
            TargetFilter::Constant { dim, .. } => *dim,
            _ => 1,
        }
    }

    pub fn input_bound(&self) -> f64 {
        match self {
            TargetFilter::LinearIir { bound, .. }
            | TargetFilter::FiniteVolterra { bound, .. }
            | TargetFilter::TanhOfLinear { bound, .. }
            | TargetFilter::BoundedArma { bound, .. } => *bound,
            TargetFilter::Sas { .. } => 1.0,
            TargetFilter::Constant { .. } => f64::INFINITY,
        }
    }

    fn check_domain(&self, z: &BoundedSequence) -> Result<()> {
        if z.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: z.dim() });
        }
        let m = self.input_bound();
        for (i, row) in z.window().iter().enumerate() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > m {
                return Err(Error::BoundViolation { index: i, reason: format!("‖z‖ = {n} exceeds the target bound {m}") });
            }
        }
        Ok(())
    }
}

impl Functional for TargetFilter {
    fn evaluate(&self, z: &BoundedSequence) -> Result<f64> {
        self.check_domain(z)?;
        match self {
            TargetFilter::LinearIir { system, tol, .. } => system.functional(z, *tol),
            TargetFilter::FiniteVolterra { kernels, .. } => {
                let u: Vec<f64> = (0..kernels.memory).map(|l| z.scalar_at(l)).collect();
                Ok(kernels.eval(&u))
            }
            TargetFilter::TanhOfLinear { system, gain, tol, .. } => Ok((gain * system.functional(z, *tol)?).tanh()),
            TargetFilter::BoundedArma { ar, ma, clip, .. } => {
                let t = z.len();
                let mut ys: Vec<f64> = Vec::with_capacity(t);
                for pos in 0..t {
                    let lag = t - 1 - pos;
                    let mut y: f64 = ma.iter().enumerate().map(|(j, b)| b * z.scalar_at(lag + j)).sum();
                    for (i, a) in ar.iter().enumerate() {
                        if let Some(k) = ys.len().checked_sub(i + 1) {
                            y += a * ys[k];
                        }
                    }
                    ys.push(y.clamp(-clip, *clip));
                }
                Ok(ys.last().copied().unwrap_or(0.0))
            }
            TargetFilter::Sas { system, tol } => system.sas_functional(z, *tol),
            TargetFilter::Constant { value, .. } => Ok(*value),
        }
    }
}

/// Serializable description of a [`TargetFilter`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    LinearIir { system: SystemDoc, bound: f64, #[serde(default = "default_tol")] tol: f64 },
    FiniteVolterra { order: usize, memory: usize, seed: u64, #[serde(default = "one")] bound: f64 },
    TanhOfLinear { system: SystemDoc, gain: f64, bound: f64, #[serde(default = "default_tol")] tol: f64 },
    BoundedArma { ar: Vec<f64>, ma: Vec<f64>, clip: f64, #[serde(default = "one")] bound: f64 },
    Sas { system: SystemDoc, #[serde(default = "default_tol")] tol: f64 },
    Constant { value: f64, #[serde(default = "one_usize")] dim: usize },
}

fn default_tol() -> f64 {
    1e-9
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

fn linear_of(doc: SystemDoc) -> Result<LinearSystem> {
    match System::from_doc(doc)? {
        System::Linear(l) => Ok(l),
        System::Sas(_) => Err(Error::InvalidParameter("expected a linear system".into())),
    }
}

impl TargetSpec {
    pub fn build(self) -> Result<TargetFilter> {
        Ok(match self {
            TargetSpec::LinearIir { system, bound, tol } => TargetFilter::LinearIir { system: linear_of(system)?, bound, tol },
            TargetSpec::FiniteVolterra { order, memory, seed, bound } => {
                TargetFilter::FiniteVolterra { kernels: Volterra::random(order, memory, seed)?, bound }
            }
            TargetSpec::TanhOfLinear { system, gain, bound, tol } => {
                TargetFilter::TanhOfLinear { system: linear_of(system)?, gain, bound, tol }
            }
            TargetSpec::BoundedArma { ar, ma, clip, bound } => TargetFilter::BoundedArma { ar, ma, clip, bound },
            TargetSpec::Sas { system, tol } => match System::from_doc(system)? {
                System::Sas(s) => TargetFilter::Sas { system: s, tol },
                System::Linear(_) => return Err(Error::InvalidParameter("expected a SAS system".into())),
            },
            TargetSpec::Constant { value, dim } => TargetFilter::Constant { value, dim },
        })
    }
}

// -- candidate families ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "SAS_eps")]
    SasEps,
    #[serde(rename = "NS_eps")]
    NsEps,
    #[serde(rename = "L_eps")]
    LEps,
    #[serde(rename = "DL_eps")]
    DlEps,
    #[serde(rename = "NL")]
    Nl,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::SasEps => "SAS_eps",
            Family::NsEps => "NS_eps",
            Family::LEps => "L_eps",
            Family::DlEps => "DL_eps",
            Family::Nl => "NL",
        }
    }

    pub fn is_sas(self) -> bool {
        matches!(self, Family::SasEps | Family::NsEps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default = "one_usize")]
    pub deg_p: usize,
    #[serde(default = "one_usize")]
    pub deg_q: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Degree of the polynomial readout for linear families.
    #[serde(default = "default_readout_degree")]
    pub readout_degree: u32,
    #[serde(default = "one_usize")]
    pub input_dim: usize,
}

fn default_eps() -> f64 {
    0.05
}
fn default_readout_degree() -> u32 {
    2
}

impl FamilySpec {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        Self { family, n, deg_p: 1, deg_q: 1, eps: default_eps(), seed, readout_degree: default_readout_degree(), input_dim: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("ε = {} must lie in (0,1)", self.eps)));
        }
        if self.n == 0 || self.input_dim == 0 {
            return Err(Error::InvalidParameter("N and the input dimension must be ≥ 1".into()));
        }
        if self.family.is_sas() && self.input_dim != 1 {
            return Err(Error::InvalidParameter("SAS families take scalar inputs".into()));
        }
        Ok(())
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn scaled_polynomial(rng: &mut ChaCha8Rng, r: usize, c: usize, deg: usize, target: f64) -> Result<MatrixPolynomial> {
    let coeffs = (0..=deg).map(|_| gaussian_matrix(rng, r, c)).collect();
    let p = MatrixPolynomial::new(r, c, coeffs)?;
    let b = p.coefficient_norm_sum();
    Ok(if b > 0.0 { p.scale(target / b) } else { p })
}

/// A readout-free reservoir drawn from `spec`; identical seeds give identical systems.
pub fn sample_candidate(spec: &FamilySpec) -> Result<System> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let target = CANDIDATE_SCALE * (1.0 - spec.eps);
    match spec.family {
        Family::SasEps => {
            let p = scaled_polynomial(&mut rng, n, n, spec.deg_p, target)?;
            let q = scaled_polynomial(&mut rng, n, 1, spec.deg_q, target)?;
            Ok(System::Sas(SasSystem::new(p, q, DVector::zeros(n), spec.eps)?))
        }
        Family::NsEps => {
            let j = DMatrix::from_fn(n, n, |i, k| if k > i { rng.sample(StandardNormal) } else { 0.0 });
            let sj = spectral_norm(&j);
            let j = if sj > 0.0 { j * (target / sj) } else { j };
            let p = MatrixPolynomial::new(n, n, vec![DMatrix::zeros(n, n), j])?;
            let q = scaled_polynomial(&mut rng, n, 1, spec.deg_q, target)?;
            Ok(System::Sas(SasSystem::new(p, q, DVector::zeros(n), spec.eps)?))
        }
        Family::LEps => {
            let a = gaussian_matrix(&mut rng, n, n);
            let a = &a * (target / spectral_norm(&a));
            let c = gaussian_matrix(&mut rng, n, spec.input_dim);
            Ok(System::Linear(LinearSystem::new(a, c, ScalarPolynomial::zero(n), spec.eps)?))
        }
        Family::DlEps => {
            let r = 1.0 - spec.eps;
            // Open interval: resample the (measure-zero) endpoint.
            let d = DVector::from_fn(n, |_, _| loop {
                let v = rng.random_range(-r..r);
                if v != -r {
                    break v;
                }
            });
            let c = gaussian_matrix(&mut rng, n, spec.input_dim);
            Ok(System::Linear(LinearSystem::new(DMatrix::from_diagonal(&d), c, ScalarPolynomial::zero(n), spec.eps)?))
        }
        Family::Nl => {
            let c = gaussian_matrix(&mut rng, n, spec.input_dim);
            Ok(System::Linear(LinearSystem::new(linalg::upper_shift(n), c, ScalarPolynomial::zero(n), spec.eps)?))
        }
    }
}

// -- features and training ---------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// The terminal state itself.
    State,
    /// Monomials of the terminal state, graded, constant first.
    Monomials(Vec<Vec<u32>>),
}

impl FeatureMap {
    pub fn for_system(system: &System, readout_degree: u32) -> Self {
        match system {
            System::Sas(_) => FeatureMap::State,
            System::Linear(l) => FeatureMap::Monomials(monomials_up_to(l.dim(), readout_degree)),
        }
    }

    pub fn len(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::State => state_dim,
            FeatureMap::Monomials(m) => m.len(),
        }
    }

    pub fn is_empty(&self, state_dim: usize) -> bool {
        self.len(state_dim) == 0
    }

    fn apply(&self, x: &DVector<f64>) -> Vec<f64> {
        match self {
            FeatureMap::State => x.iter().copied().collect(),
            FeatureMap::Monomials(m) => m.iter().map(|e| monomial(e, x.as_slice())).collect(),
        }
    }
}

/// Terminal state `x_0` of `system` driven by `z`.
pub fn terminal_state(system: &System, z: &BoundedSequence, tol: f64) -> Result<DVector<f64>> {
    match system {
        System::Sas(s) => s.series_state(z, 0, tol),
        System::Linear(l) => l.linear_state(z, 0, tol),
    }
}

/// One row per input: the terminal state mapped through `features`.
pub fn harvest_states(
    system: &System,
    inputs: &[BoundedSequence],
    features: &FeatureMap,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let rows = inputs
        .par_iter()
        .enumerate()
        .map(|(i, z)| terminal_state(system, z, tol).map(|x| features.apply(&x)).map_err(|e| tag(i, e)))
        .collect::<Result<Vec<_>>>()?;
    let cols = features.len(system.dim());
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Ridge solution `argmin ‖Xw − y‖² + λ‖w‖²` via the SVD of `[X; √λ I]`.
pub fn train_readout(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge parameter {ridge} must be ≥ 0")));
    }
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows().max(1), found: y.len() });
    }
    let p = x.ncols();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let (a, b) = if ridge > 0.0 {
        let a = linalg::vstack(&[x, &(DMatrix::identity(p, p) * ridge.sqrt())]);
        let b = linalg::vstack_vec(&[y, &DVector::zeros(p)]);
        (a, b)
    } else {
        (x.clone(), y.clone())
    };
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), if sv.len() < p { 0.0 } else { sv.min() });
    if ridge == 0.0 {
        let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut coef = u.transpose() * &b;
    for (c, s) in coef.iter_mut().zip(sv.iter()) {
        *c = if *s > 0.0 { *c / s } else { 0.0 };
    }
    Ok(v_t.transpose() * coef)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupError {
    /// Largest absolute difference seen; a lower bound on the true sup.
    pub value: f64,
    pub count: usize,
}

/// `max_i |model(z_i) − target(z_i)|` over `inputs`.
pub fn sup_error(model: &dyn Functional, target: &dyn Functional, inputs: &[BoundedSequence]) -> Result<SupError> {
    let a = evaluate_all(model, inputs)?;
    let b = evaluate_all(target, inputs)?;
    Ok(SupError { value: max_abs_diff(&a, &b), count: inputs.len() })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// The reservoir with its fitted readout installed.
    pub system: System,
    pub features: FeatureMap,
    pub weights: DVector<f64>,
    pub ridge: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub tol: f64,
}

impl TrainedModel {
    /// Fit a readout for `system` on `(inputs, targets)`.
    pub fn fit(
        system: &System,
        features: FeatureMap,
        inputs: &[BoundedSequence],
        targets: &DVector<f64>,
        ridge: f64,
        tol: f64,
    ) -> Result<Self> {
        let x = harvest_states(system, inputs, &features, tol)?;
        Self::fit_design(system, features, &x, targets, ridge, tol)
    }

    fn fit_design(
        system: &System,
        features: FeatureMap,
        x: &DMatrix<f64>,
        targets: &DVector<f64>,
        ridge: f64,
        tol: f64,
    ) -> Result<Self> {
        let weights = train_readout(x, targets, ridge)?;
        let system = install_readout(system, &features, &weights)?;
        let train_error = max_abs_diff((x * &weights).as_slice(), targets.as_slice());
        Ok(Self { system, features, weights, ridge, train_error, test_error: f64::NAN, tol })
    }
}

fn install_readout(system: &System, features: &FeatureMap, w: &DVector<f64>) -> Result<System> {
    Ok(match (system, features) {
        (System::Sas(s), FeatureMap::State) => System::Sas(s.with_readout(w.clone())?),
        (System::Linear(l), FeatureMap::Monomials(m)) => {
            System::Linear(l.with_readout(ScalarPolynomial::from_monomials(l.dim(), m, w.as_slice())?)?)
        }
        (System::Linear(l), FeatureMap::State) => System::Linear(l.with_readout(ScalarPolynomial::linear(w.as_slice()))?),
        (System::Sas(_), FeatureMap::Monomials(_)) => {
            return Err(Error::InvalidParameter("SAS readouts are linear in the state".into()))
        }
    })
}

impl Functional for TrainedModel {
    fn evaluate(&self, z: &BoundedSequence) -> Result<f64> {
        let x = terminal_state(&self.system, z, self.tol)?;
        Ok(DVector::from_vec(self.features.apply(&x)).dot(&self.weights))
    }
}

// -- separation witnesses ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessMethod {
    NilpotentShift,
    DiagonalScan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub system: LinearSystem,
    pub method: WitnessMethod,
    /// First lag at which the sequences differ.
    pub t0: usize,
    /// First differing coordinate at that lag.
    pub i0: usize,
    /// Diagonal entry chosen by the scan.
    pub b: Option<f64>,
    /// `H(z1) − H(z2)` predicted by the construction.
    pub gap: f64,
}

/// `H(z1) ≠ H(z2)` for the returned linear system.
pub fn separation_witness(
    z1: &BoundedSequence,
    z2: &BoundedSequence,
    method: WitnessMethod,
    eps: f64,
) -> Result<Witness> {
    if z1.dim() != z2.dim() {
        return Err(Error::DimensionMismatch { expected: z1.dim(), found: z2.dim() });
    }
    let d = z1.dim();
    let horizon = z1.len().max(z2.len());
    // Lag `horizon` represents the whole (constant) extension.
    let (t0, i0) = (0..=horizon)
        .find_map(|lag| {
            let (a, b) = (z1.get(lag), z2.get(lag));
            (0..d).find(|&i| a[i] != b[i]).map(|i| (lag, i))
        })
        .ok_or(Error::Indistinguishable)?;
    let s = |lag: usize| z1.get(lag)[i0] - z2.get(lag)[i0];
    match method {
        WitnessMethod::NilpotentShift => {
            let n = t0 + 1;
            let mut c = DMatrix::zeros(n, d);
            c[(n - 1, i0)] = 1.0;
            // A^{t0} e_n = e_1: the first coordinate holds z_{−t0}.
            let h = ScalarPolynomial::coordinate(n, 0);
            let system = LinearSystem::new(linalg::upper_shift(n), c, h, eps)?;
            Ok(Witness { system, method, t0, i0, b: None, gap: s(t0) })
        }
        WitnessMethod::DiagonalScan => {
            let f = |b: f64| {
                let mut sum = 0.0;
                let mut pow = 1.0;
                for j in 0..horizon {
                    sum += pow * s(j);
                    pow *= b;
                }
                sum + s(horizon) * pow / (1.0 - b)
            };
            let grid = diagonal_grid(eps);
            let b = grid
                .into_iter()
                .find(|&b| f(b).abs() > WITNESS_TOL)
                .ok_or(Error::Indistinguishable)?;
            let mut diag = DVector::zeros(d);
            diag[i0] = b;
            let system = LinearSystem::new(
                DMatrix::from_diagonal(&diag),
                DMatrix::identity(d, d),
                ScalarPolynomial::coordinate(d, i0),
                eps,
            )?;
            Ok(Witness { system, method, t0, i0, b: Some(b), gap: f(b) })
        }
    }
}

/// `b_k = (1−ε)(2(k+1)/(K+1) − 1)`, strictly inside `(−1+ε, 1−ε)`, ordered from 0 outward.
pub fn diagonal_grid(eps: f64) -> Vec<f64> {
    let k = DIAGONAL_GRID_POINTS;
    let r = 1.0 - eps;
    let mut idx: Vec<usize> = (0..k).collect();
    let center = (k - 1) as f64 / 2.0;
    idx.sort_by(|&a, &b| {
        let (da, db) = ((a as f64 - center).abs(), (b as f64 - center).abs());
        da.total_cmp(&db).then(a.cmp(&b))
    });
    idx.into_iter().map(|i| r * (2.0 * (i + 1) as f64 / (k + 1) as f64 - 1.0)).collect()
}

// -- experiments -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub schedule: Vec<FamilySpec>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Ridge values tried per candidate, selected on a validation split.
    #[serde(default = "default_ridge_grid")]
    pub ridge_grid: Vec<f64>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_test")]
    pub n_test: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Training inputs use this seed, test inputs the next one.
    #[serde(default)]
    pub input_seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Cap on candidate-input simulations.
    #[serde(default)]
    pub budget: Option<usize>,
}

fn default_restarts() -> usize {
    8
}
fn default_ridge_grid() -> Vec<f64> {
    vec![1e-10, 1e-8, 1e-6, 1e-4, 1e-2]
}
fn default_validation() -> f64 {
    0.2
}
fn default_train() -> usize {
    512
}
fn default_test() -> usize {
    256
}
fn default_window() -> usize {
    256
}

impl ApproxConfig {
    pub fn new(schedule: Vec<FamilySpec>) -> Self {
        Self {
            schedule,
            restarts: default_restarts(),
            ridge_grid: default_ridge_grid(),
            validation_fraction: default_validation(),
            n_train: default_train(),
            n_test: default_test(),
            window: default_window(),
            input_seed: 0,
            tol: default_tol(),
            budget: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::InvalidParameter("empty schedule".into()));
        }
        if self.restarts == 0 || self.n_train < 2 || self.n_test == 0 || self.window == 0 {
            return Err(Error::InvalidParameter("restarts, n_test, window ≥ 1 and n_train ≥ 2 required".into()));
        }
        if self.ridge_grid.is_empty() || self.ridge_grid.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidParameter("ridge grid must be non-empty and non-negative".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidParameter("validation fraction must lie in (0,1)".into()));
        }
        for s in &self.schedule {
            s.validate()?;
        }
        Ok(())
    }

    /// Inputs for one split: i.i.d. uniform in the ball of radius `bound`.
    pub fn inputs(&self, dim: usize, bound: f64, count: usize, seed: u64) -> Result<Vec<BoundedSequence>> {
        let e = stochastic::generate_ensemble(Generator::IidUniform { bound }, count, self.window, dim, seed)?;
        Ok(e.paths().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub family: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub restart: usize,
    pub train_err: f64,
    pub test_err: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub family: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub best_test_err: f64,
}

#[derive(Debug, Clone)]
pub struct ApproxReport {
    pub records: Vec<CandidateRecord>,
    pub curve: Vec<CurvePoint>,
    pub best: TrainedModel,
    pub best_index: usize,
    pub simulations: usize,
    /// Some candidates were skipped to stay within the budget.
    pub truncated: bool,
    pub n_test: usize,
}

impl ApproxReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let r = &self.records[self.best_index];
        let v = serde_json::json!({
            "family": r.family,
            "N": r.n,
            "restart": r.restart,
            "seed": r.seed,
            "ridge": self.best.ridge,
            "train_err": r.train_err,
            "test_err": r.test_err,
            "n_test": self.n_test,
            "simulations": self.simulations,
            "truncated": self.truncated,
            "curve": self.curve,
            "system": self.best.system.to_doc(),
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

struct Candidate {
    label: String,
    n: usize,
    restart: usize,
    seed: u64,
    source: CandidateSource,
}

enum CandidateSource {
    Sampled(FamilySpec),
    Planted(System),
}

/// Sample, train and score every candidate; the best test error wins (lowest index on ties).
///
/// `planted` systems join the pool after the schedule, keeping their own
/// reservoir and receiving a freshly trained readout.
pub fn approximate(target: &dyn Functional, cfg: &ApproxConfig, planted: &[System]) -> Result<ApproxReport> {
    cfg.validate()?;
    let dim = cfg.schedule[0].input_dim;
    let bound = 1.0;
    let train = cfg.inputs(dim, bound, cfg.n_train, cfg.input_seed)?;
    let test = cfg.inputs(dim, bound, cfg.n_test, cfg.input_seed.wrapping_add(1))?;
    let y_train = DVector::from_vec(evaluate_all(target, &train)?);
    let y_test = DVector::from_vec(evaluate_all(target, &test)?);

    let mut pool: Vec<Candidate> = Vec::new();
    for spec in &cfg.schedule {
        for r in 0..cfg.restarts {
            let seed = spec.seed.wrapping_add(r as u64);
            pool.push(Candidate {
                label: spec.family.as_str().to_string(),
                n: spec.n,
                restart: r,
                seed,
                source: CandidateSource::Sampled(FamilySpec { seed, ..spec.clone() }),
            });
        }
    }
    for (i, sys) in planted.iter().enumerate() {
        pool.push(Candidate { label: "planted".into(), n: sys.dim(), restart: i, seed: 0, source: CandidateSource::Planted(sys.clone()) });
    }

    let per = cfg.n_train + cfg.n_test;
    let allowed = cfg.budget.map_or(pool.len(), |b| (b / per).min(pool.len()));
    if allowed == 0 {
        return Err(Error::BudgetExhausted(cfg.budget.unwrap_or(0)));
    }
    let truncated = allowed < pool.len();
    pool.truncate(allowed);

    let n_fit = ((cfg.n_train as f64) * (1.0 - cfg.validation_fraction)).round().clamp(1.0, (cfg.n_train - 1) as f64) as usize;
    let results = pool
        .par_iter()
        .map(|cand| -> Result<TrainedModel> {
            let (system, degree) = match &cand.source {
                CandidateSource::Sampled(spec) => (sample_candidate(spec)?, spec.readout_degree),
                CandidateSource::Planted(s) => (s.clone(), default_readout_degree()),
            };
            let features = FeatureMap::for_system(&system, degree);
            let x = harvest_states(&system, &train, &features, cfg.tol)?;
            let x_test = harvest_states(&system, &test, &features, cfg.tol)?;
            let ridge = select_ridge(&x, &y_train, n_fit, &cfg.ridge_grid)?;
            let mut model = TrainedModel::fit_design(&system, features, &x, &y_train, ridge, cfg.tol)?;
            model.test_error = max_abs_diff((&x_test * &model.weights).as_slice(), y_test.as_slice());
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;

    let records: Vec<CandidateRecord> = pool
        .iter()
        .zip(&results)
        .map(|(c, m)| CandidateRecord {
            family: c.label.clone(),
            n: c.n,
            restart: c.restart,
            train_err: m.train_error,
            test_err: m.test_error,
            seed: c.seed,
        })
        .collect();
    let best_index = (0..records.len())
        .min_by(|&a, &b| records[a].test_err.total_cmp(&records[b].test_err).then(a.cmp(&b)))
        .expect("non-empty pool");
    let mut curve: Vec<CurvePoint> = Vec::new();
    for r in &records {
        match curve.iter_mut().find(|c| c.family == r.family && c.n == r.n) {
            Some(c) => c.best_test_err = c.best_test_err.min(r.test_err),
            None => curve.push(CurvePoint { family: r.family.clone(), n: r.n, best_test_err: r.test_err }),
        }
    }
    Ok(ApproxReport {
        best: results[best_index].clone(),
        records,
        curve,
        best_index,
        simulations: allowed * per,
        truncated,
        n_test: cfg.n_test,
    })
}

/// Ridge value with the smallest validation sup error; the first wins ties.
fn select_ridge(x: &DMatrix<f64>, y: &DVector<f64>, n_fit: usize, grid: &[f64]) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let xf = x.rows(0, n_fit).into_owned();
    let yf = y.rows(0, n_fit).into_owned();
    let xv = x.rows(n_fit, x.nrows() - n_fit).into_owned();
    let yv = y.rows(n_fit, y.len() - n_fit).into_owned();
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for &r in grid {
        match train_readout(&xf, &yf, r) {
            Ok(w) => {
                let e = max_abs_diff((&xv * &w).as_slice(), yv.as_slice());
                if best.is_none_or(|(_, be)| e < be) {
                    best = Some((r, e));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((r, _)), _) => Ok(r),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("grid is non-empty"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqspace::Extension;

    fn scalar(v: &[f64]) -> BoundedSequence {
        BoundedSequence::scalar(v, 1.0, Extension::Zero).unwrap()
    }

    #[test]
    fn nilpotent_witness_reads_the_differing_entry() {
        let z1 = scalar(&[0.5, 0.2, 0.1, 0.0, 0.3]);
        let z2 = scalar(&[0.5, -0.4, 0.1, 0.0, 0.3]);
        let w = separation_witness(&z1, &z2, WitnessMethod::NilpotentShift, 0.1).unwrap();
        assert_eq!(w.t0, 3);
        assert_eq!(w.system.dim(), 4);
        let h1 = w.system.functional(&z1, 1e-12).unwrap();
        let h2 = w.system.functional(&z2, 1e-12).unwrap();
        assert_eq!((h1 - h2).abs(), (0.2f64 - (-0.4)).abs());
    }

    #[test]
    fn equal_sequences_are_indistinguishable() {
        let z = scalar(&[0.1, 0.2]);
        for m in [WitnessMethod::NilpotentShift, WitnessMethod::DiagonalScan] {
            assert!(matches!(separation_witness(&z, &z, m, 0.1), Err(Error::Indistinguishable)));
        }
    }

    #[test]
    fn diagonal_witness_separates() {
        let z1 = scalar(&[0.3, 0.2, 0.1]);
        let z2 = scalar(&[0.3, 0.2, 0.1, 0.2]);
        let w = separation_witness(&z1, &z2, WitnessMethod::DiagonalScan, 0.05).unwrap();
        assert_eq!(w.t0, 0);
        let h1 = w.system.functional(&z1, 1e-15).unwrap();
        let h2 = w.system.functional(&z2, 1e-15).unwrap();
        assert!((h1 - h2).abs() > WITNESS_TOL);
        assert!((h1 - h2 - w.gap).abs() < 1e-12);
    }

    #[test]
    fn diagonal_grid_shape() {
        let g = diagonal_grid(0.1);
        assert_eq!(g.len(), DIAGONAL_GRID_POINTS);
        assert_eq!(g[0], 0.0);
        assert!(g.iter().all(|b| b.abs() < 0.9));
        assert!(g[1].abs() <= g[2].abs() + 1e-15);
    }

    #[test]
    fn lag_indexing() {
        assert_eq!(lags(7, 2, 5), vec![1, 2]);
        assert_eq!(lags(0, 3, 5), vec![0, 0, 0]);
    }

    #[test]
    fn volterra_evaluation() {
        let v = Volterra::new(2, 1.0, vec![vec![1.0, 2.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        // 1 + u0 + 2 u1 + u0 u1
        assert_eq!(v.eval(&[0.5, -1.0]), 1.0 + 0.5 - 2.0 - 0.5);
        assert!(Volterra::new(2, 0.0, vec![vec![1.0]]).is_err());
        let r = Volterra::random(2, 5, 1).unwrap();
        assert!((r.kernels[1].iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_recovers_planted_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(50, 4, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let y = &x * &w;
        let got = train_readout(&x, &y, 0.0).unwrap();
        assert!((got - &w).norm() < 1e-8);
        assert_eq!(train_readout(&x, &DVector::zeros(50), 1e-3).unwrap(), DVector::zeros(4));
        let dup = DMatrix::from_fn(10, 2, |i, _| i as f64);
        assert!(matches!(train_readout(&dup, &DVector::zeros(10), 0.0), Err(Error::IllConditioned { .. })));
        assert!(train_readout(&dup, &DVector::zeros(10), -1.0).is_err());
    }

    #[test]
    fn ridge_shrinks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(40, 5, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for k in -6..=3 {
            let n = train_readout(&x, &y, 10f64.powi(k)).unwrap().norm();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn candidates_are_reproducible() {
        for fam in [Family::SasEps, Family::NsEps, Family::LEps, Family::DlEps, Family::Nl] {
            let spec = FamilySpec::new(fam, 4, 7);
            let a = sample_candidate(&spec).unwrap();
            let b = sample_candidate(&spec).unwrap();
            assert_eq!(a, b);
            if fam != Family::Nl {
                assert_ne!(a, sample_candidate(&FamilySpec { seed: 8, ..spec.clone() }).unwrap());
            }
        }
        let nl = sample_candidate(&FamilySpec::new(Family::Nl, 4, 0)).unwrap();
        match nl {
            System::Linear(l) => {
                assert_eq!(l.a(), &linalg::upper_shift(4));
                assert_eq!(l.nilpotent_index(), Some(4));
            }
            _ => panic!("NL must be linear"),
        }
        match sample_candidate(&FamilySpec::new(Family::SasEps, 3, 1)).unwrap() {
            System::Sas(s) => assert!(s.p().check_conditions(0.5).unwrap().cond_ii),
            _ => panic!("SAS_eps must be SAS"),
        }
    }

    #[test]
    fn constant_target_is_matched_by_tiny_sas() {
        let target = TargetFilter::Constant { value: 0.7, dim: 1 };
        // Degree-zero p and q: the state is constant.
        let spec = FamilySpec { deg_p: 0, deg_q: 0, ..FamilySpec::new(Family::SasEps, 1, 3) };
        let mut cfg = ApproxConfig::new(vec![spec]);
        cfg.restarts = 2;
        cfg.n_train = 40;
        cfg.n_test = 20;
        cfg.window = 32;
        let rep = approximate(&target, &cfg, &[]).unwrap();
        assert!(rep.best.test_error < 1e-6, "{}", rep.best.test_error);
        assert_eq!(rep.records.len(), 2);
    }

    #[test]
    fn budget_limits_candidates() {
        let target = TargetFilter::Constant { value: 0.0, dim: 1 };
        let mut cfg = ApproxConfig::new(vec![FamilySpec::new(Family::SasEps, 2, 0)]);
        cfg.n_train = 10;
        cfg.n_test = 5;
        cfg.window = 8;
        cfg.budget = Some(31);
        let rep = approximate(&target, &cfg, &[]).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert!(rep.truncated);
        cfg.budget = Some(3);
        assert!(matches!(approximate(&target, &cfg, &[]), Err(Error::BudgetExhausted(3))));
    }

    #[test]
    fn harvest_constant_sas_rows() {
        let q0 = [0.2, -0.1];
        let s = SasSystem::new(
            MatrixPolynomial::zero(2, 2),
            MatrixPolynomial::constant(DMatrix::from_column_slice(2, 1, &q0)),
            DVector::zeros(2),
            0.1,
        )
        .unwrap();
        let inputs = vec![scalar(&[0.3, 0.1]), scalar(&[-0.9])];
        let x = harvest_states(&System::Sas(s), &inputs, &FeatureMap::State, 1e-9).unwrap();
        for i in 0..2 {
            assert_eq!(x.row(i).iter().copied().collect::<Vec<_>>(), q0.to_vec());
        }
        let bad = vec![scalar(&[0.1]), BoundedSequence::scalar(&[1.5], 2.0, Extension::Zero).unwrap()];
        let sys = sample_candidate(&FamilySpec::new(Family::SasEps, 2, 0)).unwrap();
        assert!(matches!(harvest_states(&sys, &bad, &FeatureMap::State, 1e-9), Err(Error::InadmissibleInput { index: 1, .. })));
    }
}
