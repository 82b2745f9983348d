//! Self-checks of the module invariants, for the `verify` command.
//!
//! Every suite is deterministic given its seed.  Systems from a corpus are
//! checked alongside randomly drawn ones.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{self, CombineMode};
use crate::approx::{self, separation_witness, Family, FamilySpec, TargetFilter, WitnessMethod, WITNESS_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::polymat::{self, MatrixPolynomial, ScalarPolynomial};
use crate::reservoir::{EspMargin, LinearSystem, SasSystem, System};
use crate::seqspace::{self, BoundedSequence, Extension, WeightingSequence};
use crate::stochastic::{self, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Seqspace,
    Polymat,
    Reservoir,
    Algebra,
    Approx,
    Stochastic,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Seqspace, Suite::Polymat, Suite::Reservoir, Suite::Algebra, Suite::Approx, Suite::Stochastic];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Seqspace => "seqspace",
            Suite::Polymat => "polymat",
            Suite::Reservoir => "reservoir",
            Suite::Algebra => "algebra",
            Suite::Approx => "approx",
            Suite::Stochastic => "stochastic",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Check = (String, std::result::Result<String, String>);

fn check(name: &str, f: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    (name.to_string(), f())
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn rand_poly(rng: &mut ChaCha8Rng, r: usize, c: usize, deg: usize, b: f64) -> MatrixPolynomial {
    let coeffs = (0..=deg).map(|_| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))).collect();
    let p = MatrixPolynomial::new(r, c, coeffs).expect("shapes agree");
    let s = p.coefficient_norm_sum();
    p.scale(b / s)
}

fn rand_sas(rng: &mut ChaCha8Rng, max_n: usize, bp: f64, bq: f64) -> SasSystem {
    let n = rng.random_range(1..=max_n);
    let (dp, dq) = (rng.random_range(0..=2), rng.random_range(0..=2));
    let p = rand_poly(rng, n, n, dp, bp);
    let q = rand_poly(rng, n, 1, dq, bq);
    let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    SasSystem::new(p, q, w, 0.05).expect("B_p < 0.95 is admissible")
}

fn rand_linear(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> LinearSystem {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = &a * (sigma / spectral_norm(&a));
    let c = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let mons = polymat::monomials_up_to(n, 2);
    let w: Vec<f64> = mons.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = ScalarPolynomial::from_monomials(n, &mons, &w).expect("arity agrees");
    LinearSystem::new(a, c, h, 0.05).expect("σ < 0.95 is admissible")
}

fn rand_input(rng: &mut ChaCha8Rng, t: usize) -> BoundedSequence {
    let v: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..=1.0)).collect();
    BoundedSequence::scalar(&v, 1.0, Extension::Zero).expect("entries within bound")
}

/// Run the selected suites.
pub fn run(suites: &[Suite], corpus: &[System], seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for &suite in suites {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (suite as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let checks = match suite {
            Suite::Seqspace => seqspace_checks(&mut rng),
            Suite::Polymat => polymat_checks(&mut rng, corpus),
            Suite::Reservoir => reservoir_checks(&mut rng, corpus),
            Suite::Algebra => algebra_checks(&mut rng, corpus),
            Suite::Approx => approx_checks(&mut rng, corpus),
            Suite::Stochastic => stochastic_checks(&mut rng, corpus),
        };
        out.extend(checks.into_iter().map(|(name, r)| {
            let (passed, detail) = match r {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { suite, name, passed, detail }
        }));
    }
    out
}

fn corpus_sas(corpus: &[System]) -> Vec<SasSystem> {
    corpus.iter().filter_map(|s| if let System::Sas(x) = s { Some(x.clone()) } else { None }).collect()
}

fn corpus_linear(corpus: &[System]) -> Vec<LinearSystem> {
    corpus.iter().filter_map(|s| if let System::Linear(x) = s { Some(x.clone()) } else { None }).collect()
}

fn seqspace_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut zs = Vec::new();
    for _ in 0..100 {
        let t = rng.random_range(1..=80);
        let mut z = rand_input(rng, t);
        if rng.random_bool(0.5) {
            z = BoundedSequence::new(1, z.window().to_vec(), 1.0, Extension::RepeatLastOldest).expect("valid");
        }
        zs.push(z);
    }
    let params: Vec<(f64, f64)> = (0..100).map(|_| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95))).collect();
    vec![
        check("tail inequalities", || {
            for (z, &(l, r)) in zs.iter().zip(&params) {
                let lhs = seqspace::geometric_weighted_sum(z, l).map_err(err)?;
                let w1 = WeightingSequence::exponential_power(l, 1.0 - r).map_err(err)?;
                let w2 = WeightingSequence::exponential_power(l, r).map_err(err)?;
                let r1 = seqspace::weighted_norm(z, &w1).map_err(err)? / (1.0 - l.powf(r));
                let r2 = seqspace::weighted_norm(z, &w2).map_err(err)? / (1.0 - l.powf(1.0 - r));
                require(lhs <= r1 && lhs <= r2, || format!("λ={l}, ρ={r}: {lhs} > min({r1}, {r2})"))?;
            }
            Ok(format!("{} triples", zs.len()))
        }),
        check("norm bounded by sup norm", || {
            let w = WeightingSequence::exponential(0.8).map_err(err)?;
            for z in &zs {
                let n = seqspace::weighted_norm(z, &w).map_err(err)?;
                require(n <= z.bound(), || format!("‖z‖_w = {n} > M"))?;
            }
            Ok(format!("{} sequences", zs.len()))
        }),
        check("distance is symmetric and vanishes on the diagonal", || {
            let w = WeightingSequence::exponential(0.7).map_err(err)?;
            for pair in zs.chunks(2) {
                let (a, b) = (&pair[0], &pair[pair.len() - 1]);
                let ab = seqspace::weighted_distance(a, b, &w).map_err(err)?;
                let ba = seqspace::weighted_distance(b, a, &w).map_err(err)?;
                require(ab == ba, || "asymmetric distance".into())?;
                require(seqspace::weighted_distance(a, a, &w).map_err(err)? == 0.0, || "d(z,z) ≠ 0".into())?;
            }
            Ok("50 pairs".into())
        }),
    ]
}

fn polymat_checks(rng: &mut ChaCha8Rng, corpus: &[System]) -> Vec<Check> {
    let mut polys: Vec<MatrixPolynomial> = corpus_sas(corpus).iter().map(|s| s.p().clone()).collect();
    for _ in 0..100 {
        let r = rng.random_range(1..=5);
        let deg = rng.random_range(0..=3);
        let b = rng.random_range(0.05..1.5);
        polys.push(rand_poly(rng, r, r, deg, b));
    }
    vec![
        check("condition chain (i) ⇒ (ii) ⇒ (iii)", || {
            for p in &polys {
                let lambda = 0.9 / (p.degree() + 1) as f64;
                let c = polymat::check_conditions(p, lambda, polymat::DEFAULT_GRID_STEP).map_err(err)?;
                require(!c.cond_i || c.cond_ii, || "(i) without (ii)".into())?;
                require(!c.cond_ii || c.cond_iii, || "(ii) without (iii)".into())?;
            }
            Ok(format!("{} polynomials", polys.len()))
        }),
        check("M_p lower ≤ upper ≤ B_p", || {
            for p in &polys {
                let c = p.norm_certificate(polymat::DEFAULT_GRID_STEP).map_err(err)?;
                require(c.m_p_lower <= c.m_p_upper && c.m_p_upper <= c.b_p + 1e-9, || format!("{c:?}"))?;
            }
            Ok(format!("{} polynomials", polys.len()))
        }),
        check("grid refinement tightens the bracket", || {
            for p in polys.iter().take(20) {
                let coarse = p.norm_certificate(0.1).map_err(err)?;
                let fine = p.norm_certificate(0.01).map_err(err)?;
                require(fine.m_p_lower >= coarse.m_p_lower, || "lower bound decreased".into())?;
                require(fine.m_p_lower <= coarse.m_p_upper + 1e-12, || "brackets disjoint".into())?;
            }
            Ok("20 polynomials".into())
        }),
        check("JSON round trip", || {
            for p in &polys {
                let s = serde_json::to_string(p).map_err(|e| e.to_string())?;
                let back: MatrixPolynomial = serde_json::from_str(&s).map_err(|e| e.to_string())?;
                require(&back == p, || "round trip changed the polynomial".into())?;
            }
            Ok(format!("{} polynomials", polys.len()))
        }),
    ]
}

fn reservoir_checks(rng: &mut ChaCha8Rng, corpus: &[System]) -> Vec<Check> {
    let mut systems = corpus_sas(corpus);
    for _ in 0..10 {
        let (bp, bq) = (rng.random_range(0.1..0.8), rng.random_range(0.1..1.0));
        systems.push(rand_sas(rng, 5, bp, bq));
    }
    let inputs: Vec<BoundedSequence> = (0..systems.len()).map(|_| rand_input(rng, 256)).collect();
    let pairs: Vec<(BoundedSequence, BoundedSequence)> = (0..50).map(|_| (rand_input(rng, 96), rand_input(rng, 96))).collect();
    let linear = corpus_linear(corpus);
    vec![
        check("series and recursion agree", || {
            let tol = 1e-9;
            for (s, z) in systems.iter().zip(&inputs) {
                let washout = 128;
                let rec = s.sas_run_recursion(z, None, washout).map_err(err)?;
                let ser = s.sas_run_series(z, tol).map_err(err)?;
                let bound = ser.truncation_tail_bound + rec.truncation_tail_bound + 1e-12;
                for pos in washout..z.len() {
                    let d = (&rec.states[pos] - &ser.states[pos]).norm();
                    require(d <= bound, || format!("gap {d:e} > {bound:e}"))?;
                }
            }
            Ok(format!("{} systems", systems.len()))
        }),
        check("states within K₂/(1−K₁)", || {
            for (s, z) in systems.iter().zip(&inputs) {
                let tr = s.sas_run_recursion(z, None, 0).map_err(err)?;
                let sb = s.state_bound();
                require(tr.states.iter().all(|x| x.norm() <= sb + 1e-9), || "state left the ball".into())?;
            }
            Ok(format!("{} systems", systems.len()))
        }),
        check("contraction at rate 1 − margin", || {
            for (s, z) in systems.iter().zip(&inputs) {
                let n = s.dim();
                let cap = s.state_bound() + 1.0;
                let a = DVector::from_element(n, cap / (n as f64).sqrt() / 2.0);
                let b = -&a;
                let ta = s.sas_run_recursion(z, Some(&a), 0).map_err(err)?;
                let tb = s.sas_run_recursion(z, Some(&b), 0).map_err(err)?;
                let mut r = (&a - &b).norm();
                for (xa, xb) in ta.states.iter().zip(&tb.states).take(50) {
                    r *= 1.0 - s.esp_margin();
                    require((xa - xb).norm() <= r + 1e-12, || "contraction violated".into())?;
                }
            }
            Ok(format!("{} systems", systems.len()))
        }),
        check("fading-memory modulus", || {
            let tol = 1e-12;
            for s in &systems {
                let m = s.fmp_lipschitz_constant(0.5).map_err(err)?;
                for (z, v) in &pairs {
                    let d = (s.sas_functional(z, tol).map_err(err)? - s.sas_functional(v, tol).map_err(err)?).abs();
                    let rhs = m.constant * seqspace::weighted_distance(z, v, &m.weighting).map_err(err)?
                        + 2.0 * s.readout().norm() * tol;
                    require(d <= rhs, || format!("{d:e} > {rhs:e}"))?;
                }
            }
            Ok(format!("{} systems × {} pairs", systems.len(), pairs.len()))
        }),
        check("linear closed form matches recursion", || {
            let mut count = 0;
            for l in &linear {
                if l.input_dim() != 1 {
                    continue;
                }
                let z = &inputs[0];
                let run = l.linear_run(z, 1e-12).map_err(err)?;
                let washout = l.nilpotent_index().unwrap_or(200).min(200);
                let rec = l.linear_run_recursion(z, None, washout).map_err(err)?;
                for pos in washout..z.len() {
                    let d = (&run.states[pos] - &rec.states[pos]).norm();
                    require(d <= run.truncation_tail_bound + rec.truncation_tail_bound + 1e-10, || format!("gap {d:e}"))?;
                }
                count += 1;
            }
            Ok(format!("{count} corpus systems"))
        }),
    ]
}

fn algebra_checks(rng: &mut ChaCha8Rng, corpus: &[System]) -> Vec<Check> {
    let tol = 1e-12;
    let mut sas = corpus_sas(corpus);
    for _ in 0..8 {
        let (bp, bq) = (rng.random_range(0.1..0.7), rng.random_range(0.1..0.9));
        sas.push(rand_sas(rng, 3, bp, bq));
    }
    let mut lin: Vec<LinearSystem> = corpus_linear(corpus).into_iter().filter(|l| l.input_dim() == 1).collect();
    for _ in 0..6 {
        let n = rng.random_range(1..=4);
        let sigma = rng.random_range(0.1..0.9);
        lin.push(rand_linear(rng, n, sigma));
    }
    let inputs: Vec<BoundedSequence> = (0..5).map(|_| rand_input(rng, 160)).collect();
    let lambda = rng.random_range(-2.0..2.0);
    let pairs = |n: usize| (0..n).flat_map(move |i| (i..n).map(move |j| (i, j))).collect::<Vec<_>>();
    vec![
        check("SAS sum identity and dimension", || {
            for (i, j) in pairs(sas.len()) {
                let c = algebra::sas_add(&sas[i], &sas[j], lambda).map_err(err)?;
                require(c.dim() == sas[i].dim() + sas[j].dim(), || "dimension law".into())?;
                for z in &inputs {
                    let lhs = c.sas().expect("SAS").sas_functional(z, tol).map_err(err)?;
                    let rhs = sas[i].sas_functional(z, tol).map_err(err)? + lambda * sas[j].sas_functional(z, tol).map_err(err)?;
                    require((lhs - rhs).abs() <= 1e-8, || format!("gap {:e}", (lhs - rhs).abs()))?;
                }
            }
            Ok(format!("{} pairs", pairs(sas.len()).len()))
        }),
        check("SAS product identity and dimension", || {
            let (mut literal, mut balanced) = (0, 0);
            for (i, j) in pairs(sas.len()) {
                let c = match algebra::sas_multiply(&sas[i], &sas[j]) {
                    Ok(c) => {
                        literal += 1;
                        c
                    }
                    Err(Error::Recertification { .. }) => {
                        balanced += 1;
                        algebra::sas_multiply_balanced(&sas[i], &sas[j]).map_err(err)?
                    }
                    Err(e) => return Err(e.to_string()),
                };
                let (n1, n2) = (sas[i].dim(), sas[j].dim());
                require(c.dim() == n1 + n2 + n1 * n2, || "dimension law".into())?;
                require(c.sas().expect("SAS").p().degree() <= algebra::product_degree(&sas[i], &sas[j]), || "degree law".into())?;
                for z in &inputs {
                    let lhs = c.sas().expect("SAS").sas_functional(z, tol).map_err(err)?;
                    let rhs = sas[i].sas_functional(z, tol).map_err(err)? * sas[j].sas_functional(z, tol).map_err(err)?;
                    require((lhs - rhs).abs() <= 1e-8, || format!("gap {:e}", (lhs - rhs).abs()))?;
                }
            }
            Ok(format!("{literal} literal, {balanced} balanced"))
        }),
        check("sum associativity", || {
            for w in sas.windows(3) {
                let left = algebra::sas_add(algebra::sas_add(&w[0], &w[1], 1.0).map_err(err)?.sas().expect("SAS"), &w[2], 1.0).map_err(err)?;
                let inner = algebra::sas_add(&w[1], &w[2], 1.0).map_err(err)?;
                let right = algebra::sas_add(&w[0], inner.sas().expect("SAS"), 1.0).map_err(err)?;
                for z in &inputs {
                    let a = left.sas().expect("SAS").sas_functional(z, tol).map_err(err)?;
                    let b = right.sas().expect("SAS").sas_functional(z, tol).map_err(err)?;
                    require((a - b).abs() <= 1e-10, || format!("gap {:e}", (a - b).abs()))?;
                }
            }
            Ok(format!("{} triples", sas.len().saturating_sub(2)))
        }),
        check("linear sum and product identities", || {
            let mut rejected = 0;
            for (i, j) in pairs(lin.len()) {
                let combined = algebra::linear_combine(&lin[i], &lin[j], CombineMode::Sum(lambda))
                    .and_then(|s| Ok((s, algebra::linear_combine(&lin[i], &lin[j], CombineMode::Product)?)));
                let (s, p) = match combined {
                    Ok(sp) => sp,
                    // A direct sum with σ_max at the limit is admissible only when it stays nilpotent.
                    Err(Error::NotContractive { .. }) => {
                        let both_nilpotent = lin[i].nilpotent_index().is_some() && lin[j].nilpotent_index().is_some();
                        let top = lin[i].sigma_a().max(lin[j].sigma_a());
                        require(!both_nilpotent && top > 0.9, || "admissible combination rejected".into())?;
                        rejected += 1;
                        continue;
                    }
                    Err(e) => return Err(e.to_string()),
                };
                let sig = spectral_norm(&linalg::direct_sum(lin[i].a(), lin[j].a()));
                require((sig - lin[i].sigma_a().max(lin[j].sigma_a())).abs() <= 1e-10, || "σ_max of direct sum".into())?;
                for z in &inputs {
                    let (a, b) = (lin[i].functional(z, tol).map_err(err)?, lin[j].functional(z, tol).map_err(err)?);
                    let ys = s.linear().expect("linear").functional(z, tol).map_err(err)?;
                    let yp = p.linear().expect("linear").functional(z, tol).map_err(err)?;
                    require((ys - (a + lambda * b)).abs() <= 1e-8 && (yp - a * b).abs() <= 1e-8, || "functional gap".into())?;
                }
            }
            Ok(format!("{} pairs, {rejected} rejected as inadmissible", pairs(lin.len()).len()))
        }),
        check("nilpotency closure", || {
            let strict = |rng: &mut ChaCha8Rng, n: usize| {
                let j = DMatrix::from_fn(n, n, |i, k| if k > i { rng.random_range(-1.0..1.0) } else { 0.0 });
                let s = spectral_norm(&j).max(1e-300);
                MatrixPolynomial::new(n, n, vec![DMatrix::zeros(n, n), j * (0.5 / s)]).expect("square")
            };
            let mut local = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..5 {
                let (n1, n2) = (local.random_range(1..=3), local.random_range(1..=3));
                let q1 = rand_poly(&mut local, n1, 1, 1, 0.3);
                let q2 = rand_poly(&mut local, n2, 1, 1, 0.3);
                let s1 = SasSystem::new(strict(&mut local, n1), q1, DVector::from_element(n1, 1.0), 0.05).map_err(err)?;
                let s2 = SasSystem::new(strict(&mut local, n2), q2, DVector::from_element(n2, 1.0), 0.05).map_err(err)?;
                let c = algebra::sas_multiply_balanced(&s1, &s2).map_err(err)?;
                let rep = c.sas().expect("SAS").p().is_nilpotent(c.dim(), polymat::NILPOTENT_FLOAT_TOL).map_err(err)?;
                require(rep.nilpotent, || "product of nilpotent systems is not nilpotent".into())?;
            }
            Ok("5 pairs".into())
        }),
    ]
}

fn approx_checks(rng: &mut ChaCha8Rng, corpus: &[System]) -> Vec<Check> {
    let pairs: Vec<(BoundedSequence, BoundedSequence)> = (0..50)
        .map(|_| {
            let t = rng.random_range(1..=64);
            let a = rand_input(rng, t);
            let mut w: Vec<f64> = a.window().iter().map(|r| r[0]).collect();
            let pos = rng.random_range(0..t);
            w[pos] = if w[pos] > 0.0 { w[pos] - 0.5 } else { w[pos] + 0.5 };
            (a, BoundedSequence::scalar(&w, 1.0, Extension::Zero).expect("within bound"))
        })
        .collect();
    let sas = corpus_sas(corpus).into_iter().find(|s| s.q().degree() > 0).unwrap_or_else(|| rand_sas(rng, 4, 0.6, 0.6));
    let x = DMatrix::from_fn(60, 5, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(60, |_, _| rng.random_range(-1.0..1.0));
    let perturb: Vec<DVector<f64>> =
        (0..100).map(|_| DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)).normalize() * 1e-3).collect();
    vec![
        check("separation witnesses", || {
            for (a, b) in &pairs {
                let n = separation_witness(a, b, WitnessMethod::NilpotentShift, 0.05).map_err(err)?;
                let gap = n.system.functional(a, 1e-12).map_err(err)? - n.system.functional(b, 1e-12).map_err(err)?;
                require(gap == n.gap && gap != 0.0, || "nilpotent witness not exact".into())?;
                let d = separation_witness(a, b, WitnessMethod::DiagonalScan, 0.05).map_err(err)?;
                let gap = d.system.functional(a, 1e-15).map_err(err)? - d.system.functional(b, 1e-15).map_err(err)?;
                require(gap.abs() > WITNESS_TOL, || "diagonal witness too weak".into())?;
            }
            Ok(format!("{} pairs", pairs.len()))
        }),
        check("ridge optimality", || {
            let lambda = 1e-6;
            let w = approx::train_readout(&x, &y, lambda).map_err(err)?;
            let obj = |v: &DVector<f64>| (&x * v - &y).norm_squared() + lambda * v.norm_squared();
            let best = obj(&w);
            require(perturb.iter().all(|d| obj(&(&w + d)) >= best), || "a perturbation improved the objective".into())?;
            Ok("100 perturbations of norm 1e-3".into())
        }),
        check("self-approximation", || {
            let target = TargetFilter::Sas { system: sas.clone(), tol: 1e-12 };
            let planted = System::Sas(sas.with_readout(DVector::zeros(sas.dim())).map_err(err)?);
            let spec = FamilySpec::new(Family::SasEps, 2, 1);
            let cfg = approx::ApproxConfig {
                restarts: 1,
                n_train: 64,
                n_test: 32,
                window: 128,
                tol: 1e-12,
                ..approx::ApproxConfig::new(vec![spec])
            };
            let rep = approx::approximate(&target, &cfg, &[planted]).map_err(err)?;
            let e = rep.records.last().expect("planted").test_err;
            require(e < 1e-6, || format!("planted error {e:e}"))?;
            Ok(format!("planted error {e:.2e}"))
        }),
        check("candidate reproducibility", || {
            for fam in [Family::SasEps, Family::NsEps, Family::LEps, Family::DlEps, Family::Nl] {
                let spec = FamilySpec::new(fam, 3, 11);
                let a = approx::sample_candidate(&spec).map_err(err)?;
                let b = approx::sample_candidate(&spec).map_err(err)?;
                require(a.to_json().map_err(err)? == b.to_json().map_err(err)?, || format!("{} not reproducible", fam.as_str()))?;
            }
            Ok("5 families".into())
        }),
    ]
}

fn stochastic_checks(rng: &mut ChaCha8Rng, corpus: &[System]) -> Vec<Check> {
    let seed = rng.random::<u64>();
    let sas = corpus_sas(corpus).into_iter().find(|s| s.q().degree() > 0).unwrap_or_else(|| rand_sas(rng, 3, 0.6, 0.6));
    let other = rand_sas(rng, sas.dim(), 0.5, 0.5);
    let gens = [
        Generator::IidUniform { bound: 1.0 },
        Generator::ClippedAr1 { phi: 0.9, sigma: 0.4, bound: 1.0 },
        Generator::BoundedArma { ar: vec![0.4], ma: vec![0.3, 0.2], bound: 0.8 },
    ];
    let ensembles: Vec<_> = gens
        .iter()
        .enumerate()
        .map(|(i, g)| stochastic::generate_ensemble(g.clone(), 64, 64, 1, seed.wrapping_add(i as u64)))
        .collect();
    vec![
        check("bounds and moments", || {
            for e in &ensembles {
                let e = e.as_ref().map_err(|x| x.to_string())?;
                require(stochastic::linf_norm(e).map_err(err)? <= e.bound(), || "path left the ball".into())?;
                require(stochastic::bounded_moment_check(e, 4).map_err(err)?.passed, || "moment bound".into())?;
                let w = WeightingSequence::exponential(0.9).map_err(err)?;
                stochastic::linf_weighted_norm(e, &w).map_err(err)?;
            }
            Ok(format!("{} ensembles", ensembles.len()))
        }),
        check("restriction commutes with pathwise application", || {
            let f = TargetFilter::Sas { system: sas.clone(), tol: 1e-10 };
            for e in &ensembles {
                let e = e.as_ref().map_err(|x| x.to_string())?;
                if e.bound() > 1.0 {
                    continue;
                }
                let all = stochastic::pathwise_apply(&f, e).map_err(err)?;
                let idx: Vec<usize> = (0..e.len()).step_by(3).collect();
                let sub = stochastic::pathwise_apply(&f, &e.select(&idx).map_err(err)?).map_err(err)?;
                require(idx.iter().zip(&sub).all(|(&i, v)| all[i].to_bits() == v.to_bits()), || "restriction mismatch".into())?;
            }
            Ok("3 ensembles".into())
        }),
        check("transfer principle", || {
            let target = TargetFilter::Sas { system: sas.clone(), tol: 1e-10 };
            let model = TargetFilter::Sas { system: other.clone(), tol: 1e-10 };
            for e in &ensembles {
                let e = e.as_ref().map_err(|x| x.to_string())?;
                let rep = stochastic::transfer_check(&target, &model, e, None).map_err(err)?;
                require(rep.deterministic_bound_holds, || "stochastic and deterministic errors differ".into())?;
            }
            Ok("3 ensembles".into())
        }),
        check("fading memory transfers to ensembles", || {
            let m = sas.fmp_lipschitz_constant(0.5).map_err(err)?;
            let tol = 1e-12;
            let f = TargetFilter::Sas { system: sas.clone(), tol };
            let (e1, e2) = (
                stochastic::generate_ensemble(Generator::IidUniform { bound: 1.0 }, 64, 64, 1, seed).map_err(err)?,
                stochastic::generate_ensemble(Generator::IidUniform { bound: 1.0 }, 64, 64, 1, seed ^ 1).map_err(err)?,
            );
            let (y1, y2) = (stochastic::pathwise_apply(&f, &e1).map_err(err)?, stochastic::pathwise_apply(&f, &e2).map_err(err)?);
            let lhs = y1.iter().zip(&y2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let dist = e1
                .paths()
                .iter()
                .zip(e2.paths())
                .map(|(a, b)| seqspace::weighted_distance(a, b, &m.weighting))
                .collect::<Result<Vec<_>>>()
                .map_err(err)?
                .into_iter()
                .fold(0.0, f64::max);
            let rhs = m.constant * dist + 2.0 * sas.readout().norm() * tol;
            require(lhs <= rhs, || format!("{lhs:e} > {rhs:e}"))?;
            Ok(format!("{lhs:.3e} ≤ {rhs:.3e}"))
        }),
    ]
}
