//! Left-infinite bounded input sequences and weighted sup norms.
//!
//! A sequence `z = (…, z₋₂, z₋₁, z₀)` is stored as a finite window of the
//! most recent `T` entries (oldest first) together with an [`Extension`]
//! rule that says what lives further in the past.  Index `k` in the
//! accessors always means the lag, i.e. `get(k)` is `z₋ₖ`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decreasing weights `w: ℕ → (0, 1]` with zero limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightingSequence {
    /// `w_t = λ^t`.
    Exponential { lambda: f64 },
    /// `w_t = λ^{ρ t}`.
    ExponentialPower { lambda: f64, rho: f64 },
    /// `w_t = table[t]` inside the table, then geometric decay by `tail`.
    Explicit { table: Vec<f64>, tail: f64 },
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl WeightingSequence {
    pub fn exponential(lambda: f64) -> Result<Self> {
        let w = Self::Exponential { lambda };
        w.validate()?;
        Ok(w)
    }

    pub fn exponential_power(lambda: f64, rho: f64) -> Result<Self> {
        let w = Self::ExponentialPower { lambda, rho };
        w.validate()?;
        Ok(w)
    }

    pub fn explicit(table: Vec<f64>, tail: f64) -> Result<Self> {
        let w = Self::Explicit { table, tail };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Exponential { lambda } if open_unit(*lambda) => Ok(()),
            Self::ExponentialPower { lambda, rho } if open_unit(*lambda) && open_unit(*rho) => {
                Ok(())
            }
            Self::Explicit { table, tail } => {
                if table.is_empty() {
                    return Err(Error::InvalidParameter("empty weight table".into()));
                }
                if !open_unit(*tail) {
                    return Err(Error::InvalidParameter(format!(
                        "tail factor {tail} must lie in (0,1)"
                    )));
                }
                if table[0] > 1.0 || table.iter().any(|&x| x <= 0.0) {
                    return Err(Error::InvalidParameter("weights must lie in (0,1]".into()));
                }
                if table.windows(2).any(|p| p[1] > p[0]) {
                    return Err(Error::InvalidParameter("weights must be non-increasing".into()));
                }
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!("invalid weighting {other:?}"))),
        }
    }

    /// `w_t`.
    pub fn weight(&self, t: usize) -> f64 {
        match self {
            Self::Exponential { lambda } => lambda.powi(t as i32),
            Self::ExponentialPower { lambda, rho } => lambda.powf(rho * t as f64),
            Self::Explicit { table, tail } => match table.get(t) {
                Some(&w) => w,
                None => table[table.len() - 1] * tail.powi((t + 1 - table.len()) as i32),
            },
        }
    }
}

/// How entries older than the stored window are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    #[default]
    Zero,
    RepeatLastOldest,
}

impl Extension {
    pub fn as_str(self) -> &'static str {
        match self {
            Extension::Zero => "zero",
            Extension::RepeatLastOldest => "repeat_last_oldest",
        }
    }
}

impl std::str::FromStr for Extension {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(Extension::Zero),
            "repeat_last_oldest" => Ok(Extension::RepeatLastOldest),
            other => Err(Error::Parse(format!("unknown extension `{other}`"))),
        }
    }
}

/// Element of `K_M`: a bounded left-infinite sequence in `ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedSequence {
    dim: usize,
    bound: f64,
    extension: Extension,
    /// Oldest first; `window[T-1]` is `z₀`.
    window: Vec<Vec<f64>>,
    zero: Vec<f64>,
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl BoundedSequence {
    pub fn new(dim: usize, window: Vec<Vec<f64>>, bound: f64, extension: Extension) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("bound {bound} must be finite and ≥ 0")));
        }
        for (i, row) in window.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            let n = euclid(row);
            if !(n <= bound) {
                return Err(Error::BoundViolation {
                    index: i,
                    reason: format!("‖z‖ = {n} exceeds M = {bound}"),
                });
            }
        }
        Ok(Self { dim, bound, extension, window, zero: vec![0.0; dim] })
    }

    /// Scalar sequence from values listed oldest first.
    pub fn scalar(values: &[f64], bound: f64, extension: Extension) -> Result<Self> {
        Self::new(1, values.iter().map(|&v| vec![v]).collect(), bound, extension)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn bound(&self) -> f64 {
        self.bound
    }
    pub fn extension(&self) -> Extension {
        self.extension
    }
    /// Stored window length `T`.
    pub fn len(&self) -> usize {
        self.window.len()
    }
    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
    /// Stored entries, oldest first.
    pub fn window(&self) -> &[Vec<f64>] {
        &self.window
    }

    /// `z₋ₖ`, using the extension rule past the window.
    pub fn get(&self, lag: usize) -> &[f64] {
        let t = self.window.len();
        if lag < t {
            return &self.window[t - 1 - lag];
        }
        match self.extension {
            Extension::Zero => &self.zero,
            Extension::RepeatLastOldest => self.window.first().unwrap_or(&self.zero),
        }
    }

    /// First component of `z₋ₖ`; the natural accessor for scalar streams.
    pub fn scalar_at(&self, lag: usize) -> f64 {
        self.get(lag)[0]
    }

    /// Entry at window position `i` (0 = oldest) as a lag.
    pub fn lag_of(&self, position: usize) -> usize {
        self.window.len() - 1 - position
    }

    pub fn with_bound(&self, bound: f64) -> Result<Self> {
        Self::new(self.dim, self.window.clone(), bound, self.extension)
    }

    // -- CSV ---------------------------------------------------------------

    /// Header record `dim,bound,extension`, then one row per time step,
    /// oldest first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record([
            self.dim.to_string(),
            format!("{:?}", self.bound),
            self.extension.as_str().to_string(),
        ])?;
        for row in &self.window {
            w.write_record(row.iter().map(|x| format!("{x:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut records = r.records();
        let head = records
            .next()
            .ok_or_else(|| Error::Parse("missing `dim,bound,extension` header".into()))??;
        if head.len() != 3 {
            return Err(Error::Parse("header must read `dim,bound,extension`".into()));
        }
        let dim: usize = head[0].parse().map_err(|e| Error::Parse(format!("dim: {e}")))?;
        let bound: f64 = head[1].parse().map_err(|e| Error::Parse(format!("bound: {e}")))?;
        let extension: Extension = head[2].parse()?;
        let mut window = Vec::new();
        for rec in records {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("entry `{f}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            window.push(row);
        }
        Self::new(dim, window, bound, extension)
    }
}

fn check_same_dim(z: &BoundedSequence, s: &BoundedSequence) -> Result<()> {
    if z.dim != s.dim {
        return Err(Error::DimensionMismatch { expected: z.dim, found: s.dim });
    }
    Ok(())
}

/// `‖z‖_w = sup_t ‖z₋ₜ‖ w_t`, including the exact tail contribution.
pub fn weighted_norm(z: &BoundedSequence, w: &WeightingSequence) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let t = z.len();
    let body = (0..t).map(|k| euclid(z.get(k)) * w.weight(k)).fold(0.0, f64::max);
    // Past the window the entries are constant (zero or the oldest entry)
    // and w is non-increasing, so the tail sup sits at lag T.
    let tail = euclid(z.get(t)) * w.weight(t);
    Ok(body.max(tail))
}

/// `‖z − s‖_w` with both windows aligned at `t = 0`.
pub fn weighted_distance(
    z: &BoundedSequence,
    s: &BoundedSequence,
    w: &WeightingSequence,
) -> Result<f64> {
    check_same_dim(z, s)?;
    let t = z.len().max(s.len());
    if t == 0 {
        return Err(Error::EmptyWindow);
    }
    let diff = |k: usize| {
        let (a, b) = (z.get(k), s.get(k));
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let body = (0..t).map(|k| diff(k) * w.weight(k)).fold(0.0, f64::max);
    Ok(body.max(diff(t) * w.weight(t)))
}

/// Causal delay `U_τ(z)_t = z_{t−τ}`; the window length is kept.
pub fn time_shift(z: &BoundedSequence, tau: usize) -> BoundedSequence {
    let t = z.len();
    let window = (0..t).rev().map(|k| z.get(k + tau).to_vec()).collect();
    BoundedSequence { window, ..z.clone() }
}

/// `Σ_{t≥0} ‖z₋ₜ‖ λ^t` with the closed-form tail of the extension.
pub fn geometric_weighted_sum(z: &BoundedSequence, lambda: f64) -> Result<f64> {
    if !open_unit(lambda) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must lie in (0,1)")));
    }
    let t = z.len();
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 0..t {
        sum += euclid(z.get(k)) * pow;
        pow *= lambda;
    }
    let tail = match z.extension {
        Extension::Zero => 0.0,
        Extension::RepeatLastOldest => euclid(z.get(t)) * lambda.powi(t as i32) / (1.0 - lambda),
    };
    Ok(sum + tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, dim: usize, m: f64) -> BoundedSequence {
        let window = (0..t)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = euclid(&v).max(1.0);
                v.into_iter().map(|x| x / n * m * 0.999).collect()
            })
            .collect();
        BoundedSequence::new(dim, window, m, Extension::Zero).unwrap()
    }

    #[test]
    fn constant_sequence_norm_is_one() {
        let z = BoundedSequence::scalar(&[1.0; 10], 1.0, Extension::RepeatLastOldest).unwrap();
        let w = WeightingSequence::exponential(0.5).unwrap();
        assert_eq!(weighted_norm(&z, &w).unwrap(), 1.0);
    }

    #[test]
    fn zero_sequence_norm_is_zero() {
        let z = BoundedSequence::scalar(&[0.0; 7], 1.0, Extension::Zero).unwrap();
        let w = WeightingSequence::exponential(0.5).unwrap();
        assert_eq!(weighted_norm(&z, &w).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_seq(&mut rng, 64, 3, 2.0);
        let w = WeightingSequence::exponential(0.9).unwrap();
        let mut oracle = 0.0_f64;
        for (i, row) in z.window().iter().enumerate() {
            let lag = 63 - i;
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            oracle = oracle.max(n * 0.9_f64.powi(lag as i32));
        }
        assert_eq!(weighted_norm(&z, &w).unwrap(), oracle);
    }

    #[test]
    fn empty_window_and_dim_errors() {
        let z = BoundedSequence::new(2, vec![], 1.0, Extension::Zero).unwrap();
        let w = WeightingSequence::exponential(0.5).unwrap();
        assert!(matches!(weighted_norm(&z, &w), Err(Error::EmptyWindow)));
        assert!(BoundedSequence::new(2, vec![vec![0.0]], 1.0, Extension::Zero).is_err());
        let s = BoundedSequence::scalar(&[0.0], 1.0, Extension::Zero).unwrap();
        let v = BoundedSequence::new(2, vec![vec![0.0, 0.0]], 1.0, Extension::Zero).unwrap();
        assert!(matches!(weighted_distance(&s, &v, &w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bound_is_enforced() {
        assert!(matches!(
            BoundedSequence::scalar(&[0.5, 1.5], 1.0, Extension::Zero),
            Err(Error::BoundViolation { index: 1, .. })
        ));
    }

    #[test]
    fn distance_of_constants() {
        let w = WeightingSequence::exponential(0.3).unwrap();
        let one = BoundedSequence::scalar(&[1.0; 5], 1.0, Extension::RepeatLastOldest).unwrap();
        let zero = BoundedSequence::scalar(&[0.0; 5], 1.0, Extension::RepeatLastOldest).unwrap();
        assert_eq!(weighted_distance(&one, &one, &w).unwrap(), 0.0);
        assert_eq!(weighted_distance(&one, &zero, &w).unwrap(), 1.0);
    }

    #[test]
    fn distance_with_unequal_windows_uses_extensions() {
        let w = WeightingSequence::exponential(0.5).unwrap();
        let a = BoundedSequence::scalar(&[1.0, 0.0], 1.0, Extension::RepeatLastOldest).unwrap();
        let b = BoundedSequence::scalar(&[0.0, 0.0, 0.0, 0.0], 1.0, Extension::Zero).unwrap();
        // a₋₁ = 1 and a repeats 1 forever; the largest weighted entry is at lag 1.
        assert_eq!(weighted_distance(&a, &b, &w).unwrap(), 0.5);
    }

    #[test]
    fn shift_definition() {
        let z = BoundedSequence::scalar(&[0.1, 0.2, 0.3], 1.0, Extension::Zero).unwrap();
        assert_eq!(time_shift(&z, 0), z);
        let s = time_shift(&z, 1);
        let vals: Vec<f64> = s.window().iter().map(|r| r[0]).collect();
        assert_eq!(vals, vec![0.0, 0.1, 0.2]);
        let r = BoundedSequence::scalar(&[0.1, 0.2, 0.3], 1.0, Extension::RepeatLastOldest).unwrap();
        let vals: Vec<f64> = time_shift(&r, 2).window().iter().map(|r| r[0]).collect();
        assert_eq!(vals, vec![0.1, 0.1, 0.1]);
    }

    #[test]
    fn geometric_sum_of_constant() {
        let z = BoundedSequence::scalar(&[0.7; 20], 0.7, Extension::RepeatLastOldest).unwrap();
        let got = geometric_weighted_sum(&z, 0.6).unwrap();
        assert!((got - 0.7 / 0.4).abs() < 1e-12);
        let zero = BoundedSequence::scalar(&[0.0; 4], 1.0, Extension::Zero).unwrap();
        assert_eq!(geometric_weighted_sum(&zero, 0.6).unwrap(), 0.0);
        assert!(geometric_weighted_sum(&zero, 1.0).is_err());
    }

    #[test]
    fn weights_validate() {
        assert!(WeightingSequence::exponential(1.0).is_err());
        assert!(WeightingSequence::exponential_power(0.5, 0.0).is_err());
        assert!(WeightingSequence::explicit(vec![1.0, 0.5, 0.7], 0.5).is_err());
        assert!(WeightingSequence::explicit(vec![1.0, 0.5], 1.0).is_err());
        let w = WeightingSequence::explicit(vec![1.0, 0.5], 0.5).unwrap();
        assert_eq!(w.weight(3), 0.125);
        let p = WeightingSequence::exponential_power(0.25, 0.5).unwrap();
        assert!((p.weight(2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_seq(&mut rng, 9, 2, 1.5);
        let mut buf = Vec::new();
        z.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2,1.5,zero\n"));
        assert_eq!(BoundedSequence::read_csv(&buf[..]).unwrap(), z);
    }
}
