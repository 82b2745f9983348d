//! Finite ensembles of almost surely bounded input paths.
//!
//! The probability space is the finite index set of paths, so essential
//! suprema are plain maxima.  Every generated path satisfies `‖z_t‖ ≤ M` at
//! every stored `t` by hard clipping.  Path `i` draws from `ChaCha8` seeded
//! with the ensemble seed on stream `i`, so results do not depend on the
//! thread schedule.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{self, Functional};
use crate::error::{Error, Result};
use crate::seqspace::{self, BoundedSequence, Extension, WeightingSequence};

/// Steps discarded before recording an autoregressive path.
pub const BURN_IN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Coordinates uniform in `[−M/√d, M/√d]`.
    IidUniform { bound: f64 },
    /// `z_t = clip(φ z_{t−1} + σ u_t, M)` with `u_t` uniform in `[−1, 1]^d`.
    ClippedAr1 { phi: f64, sigma: f64, bound: f64 },
    /// `z_t = clip(Σ a_i z_{t−i} + u_t + Σ b_j u_{t−j}, M)`.
    BoundedArma { ar: Vec<f64>, ma: Vec<f64>, bound: f64 },
}

impl Generator {
    pub fn bound(&self) -> f64 {
        match self {
            Generator::IidUniform { bound }
            | Generator::ClippedAr1 { bound, .. }
            | Generator::BoundedArma { bound, .. } => *bound,
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.bound();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidParameter(format!("ensemble bound {m} must be positive")));
        }
        let finite = match self {
            Generator::IidUniform { .. } => true,
            Generator::ClippedAr1 { phi, sigma, .. } => phi.is_finite() && sigma.is_finite(),
            Generator::BoundedArma { ar, ma, .. } => ar.iter().chain(ma).all(|v| v.is_finite()),
        };
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidParameter("generator coefficients must be finite".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDescriptor {
    pub generator: Generator,
    pub n_paths: usize,
    pub window: usize,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputEnsemble {
    descriptor: EnsembleDescriptor,
    paths: Vec<BoundedSequence>,
}

/// Radial clip to the closed ball of radius `m`.
fn clip(v: &mut [f64], m: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > m {
        let f = m / norm;
        v.iter_mut().for_each(|x| *x *= f);
        // Rounding can leave the norm a hair above m.
        while v.iter().map(|x| x * x).sum::<f64>().sqrt() > m {
            v.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, d: usize, half_width: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-half_width..=half_width)).collect()
}

fn generate_path(desc: &EnsembleDescriptor, index: usize) -> Result<BoundedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
    rng.set_stream(index as u64);
    let (d, t) = (desc.dim, desc.window);
    let m = desc.generator.bound();
    let mut window = Vec::with_capacity(t);
    match &desc.generator {
        Generator::IidUniform { .. } => {
            let hw = m / (d as f64).sqrt();
            for _ in 0..t {
                let mut v = uniform(&mut rng, d, hw);
                clip(&mut v, m);
                window.push(v);
            }
        }
        Generator::ClippedAr1 { phi, sigma, .. } => {
            let mut z = vec![0.0; d];
            for step in 0..BURN_IN + t {
                let u = uniform(&mut rng, d, 1.0);
                for (zi, ui) in z.iter_mut().zip(&u) {
                    *zi = phi * *zi + sigma * ui;
                }
                clip(&mut z, m);
                if step >= BURN_IN {
                    window.push(z.clone());
                }
            }
        }
        Generator::BoundedArma { ar, ma, .. } => {
            let mut zs: Vec<Vec<f64>> = Vec::new();
            let mut us: Vec<Vec<f64>> = Vec::new();
            for step in 0..BURN_IN + t {
                let u = uniform(&mut rng, d, 1.0);
                let mut z = u.clone();
                for (i, a) in ar.iter().enumerate() {
                    if let Some(prev) = zs.len().checked_sub(i + 1).map(|k| &zs[k]) {
                        z.iter_mut().zip(prev).for_each(|(zi, pi)| *zi += a * pi);
                    }
                }
                for (j, b) in ma.iter().enumerate() {
                    if let Some(prev) = us.len().checked_sub(j + 1).map(|k| &us[k]) {
                        z.iter_mut().zip(prev).for_each(|(zi, pi)| *zi += b * pi);
                    }
                }
                clip(&mut z, m);
                zs.push(z);
                us.push(u);
                if step >= BURN_IN {
                    window.push(zs.last().expect("just pushed").clone());
                }
            }
        }
    }
    BoundedSequence::new(d, window, m, Extension::Zero)
}

pub fn generate_ensemble(
    generator: Generator,
    n_paths: usize,
    window: usize,
    dim: usize,
    seed: u64,
) -> Result<InputEnsemble> {
    generator.validate()?;
    if n_paths == 0 || window == 0 || dim == 0 {
        return Err(Error::InvalidParameter("ensembles need n_paths, window and dim ≥ 1".into()));
    }
    let descriptor = EnsembleDescriptor { generator, n_paths, window, dim, seed };
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|i| generate_path(&descriptor, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(InputEnsemble { descriptor, paths })
}

impl InputEnsemble {
    /// Wrap existing paths; they must share dimension, length and bound.
    pub fn from_paths(descriptor: EnsembleDescriptor, paths: Vec<BoundedSequence>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidParameter("empty ensemble".into()));
        }
        for (i, p) in paths.iter().enumerate() {
            if p.dim() != descriptor.dim || p.len() != descriptor.window {
                return Err(Error::InadmissibleInput {
                    index: i,
                    reason: format!("path has shape {}×{}, expected {}×{}", p.len(), p.dim(), descriptor.window, descriptor.dim),
                });
            }
            if p.bound() > descriptor.generator.bound() {
                return Err(Error::InadmissibleInput { index: i, reason: "path bound exceeds the ensemble bound".into() });
            }
        }
        let descriptor = EnsembleDescriptor { n_paths: paths.len(), ..descriptor };
        Ok(Self { descriptor, paths })
    }

    pub fn descriptor(&self) -> &EnsembleDescriptor {
        &self.descriptor
    }
    pub fn paths(&self) -> &[BoundedSequence] {
        &self.paths
    }
    pub fn len(&self) -> usize {
        self.paths.len()
    }
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
    pub fn bound(&self) -> f64 {
        self.descriptor.generator.bound()
    }

    /// Sub-ensemble with the given path indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let paths = indices
            .iter()
            .map(|&i| self.paths.get(i).cloned().ok_or_else(|| Error::InvalidParameter(format!("no path {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_paths(self.descriptor.clone(), paths)
    }

    /// Columns `path_id,t,z_1..z_d`, `t` from `−(T−1)` to `0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        header.extend((1..=self.descriptor.dim).map(|i| format!("z_{i}")));
        w.write_record(&header)?;
        for (id, path) in self.paths.iter().enumerate() {
            let t_len = path.len() as i64;
            for (pos, row) in path.window().iter().enumerate() {
                let mut rec = vec![id.to_string(), (pos as i64 - (t_len - 1)).to_string()];
                rec.extend(row.iter().map(|v| format!("{v:?}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv), given the descriptor.
    pub fn read_csv<R: Read>(descriptor: EnsembleDescriptor, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let id: usize = rec.get(0).ok_or_else(|| Error::Parse("missing path_id".into()))?.trim().parse()
                .map_err(|e| Error::Parse(format!("path_id: {e}")))?;
            let vals = rec
                .iter()
                .skip(2)
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("value {s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if id == rows.len() {
                rows.push(Vec::new());
            } else if id + 1 != rows.len() {
                return Err(Error::Parse(format!("path ids must be contiguous, found {id}")));
            }
            rows[id].push(vals);
        }
        let m = descriptor.generator.bound();
        let paths = rows
            .into_iter()
            .map(|w| BoundedSequence::new(descriptor.dim, w, m, Extension::Zero))
            .collect::<Result<Vec<_>>>()?;
        Self::from_paths(descriptor, paths)
    }
}

/// `‖z‖_{L∞} = max_ω sup_t ‖z_t(ω)‖`; also checks `sup_t max_ω` agrees.
pub fn linf_norm(e: &InputEnsemble) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let path_first = e
        .paths
        .iter()
        .map(|p| p.window().iter().map(|r| seqspace::euclid(r)).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let time_first = (0..e.descriptor.window)
        .map(|pos| e.paths.iter().map(|p| seqspace::euclid(&p.window()[pos])).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert_eq!(path_first.to_bits(), time_first.to_bits(), "sup and max must commute on finite ensembles");
    Ok(path_first)
}

/// `max_ω ‖z(ω)‖_w`; also checks `sup_t w_t max_ω ‖z_{−t}(ω)‖` agrees.
pub fn linf_weighted_norm(e: &InputEnsemble, w: &WeightingSequence) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    w.validate()?;
    let path_first = e
        .paths
        .iter()
        .map(|p| seqspace::weighted_norm(p, w))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    // Lags 0..T cover the window plus the first extension value.
    let time_first = (0..=e.descriptor.window)
        .map(|lag| {
            e.paths.iter().map(|p| seqspace::euclid(p.get(lag)) * w.weight(lag)).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    assert_eq!(path_first.to_bits(), time_first.to_bits(), "sup and max must commute on finite ensembles");
    Ok(path_first)
}

/// `(U(z))(ω) = U(z(ω))`, indexed like the paths.
pub fn pathwise_apply(f: &dyn Functional, e: &InputEnsemble) -> Result<Vec<f64>> {
    approx::evaluate_all(f, e.paths())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub stochastic_sup_err: f64,
    pub deterministic_sup_err: f64,
    pub n_paths: usize,
    /// Stochastic and deterministic errors coincide bit for bit.
    pub deterministic_bound_holds: bool,
    /// Against a supplied certificate for a larger input family, if any.
    pub certificate_holds: Option<bool>,
}

pub fn transfer_check(
    target: &dyn Functional,
    model: &dyn Functional,
    e: &InputEnsemble,
    certificate: Option<f64>,
) -> Result<TransferReport> {
    let yt = pathwise_apply(target, e)?;
    let ym = pathwise_apply(model, e)?;
    let stochastic = yt.iter().zip(&ym).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let deterministic = approx::sup_error(model, target, e.paths())?.value;
    Ok(TransferReport {
        stochastic_sup_err: stochastic,
        deterministic_sup_err: deterministic,
        n_paths: e.len(),
        deterministic_bound_holds: stochastic.to_bits() == deterministic.to_bits(),
        certificate_holds: certificate.map(|c| stochastic <= c),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub bound: f64,
    /// `moments[k−1][pos]` is the path mean of `‖z_t‖^k`.
    pub moments: Vec<Vec<f64>>,
    /// Largest `moment / M^k` seen.
    pub max_ratio: f64,
    pub passed: bool,
}

/// Checks `E‖z_t‖^k ≤ M^k` for `k ≤ k_max`, up to `n·ε_mach` rounding.
pub fn bounded_moment_check(e: &InputEnsemble, k_max: u32) -> Result<MomentReport> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be ≥ 1".into()));
    }
    let m = e.bound();
    let n = e.len() as f64;
    let slack = 1.0 + (n + 1.0) * f64::EPSILON;
    let mut moments = Vec::with_capacity(k_max as usize);
    let mut max_ratio = 0.0_f64;
    let mut passed = true;
    for k in 1..=k_max {
        let ck = m.powi(k as i32);
        let row: Vec<f64> = (0..e.descriptor.window)
            .map(|pos| e.paths.iter().map(|p| seqspace::euclid(&p.window()[pos]).powi(k as i32)).sum::<f64>() / n)
            .collect();
        for &v in &row {
            max_ratio = max_ratio.max(v / ck);
            passed &= v <= ck * slack;
        }
        moments.push(row);
    }
    Ok(MomentReport { bound: m, moments, max_ratio, passed })
}
