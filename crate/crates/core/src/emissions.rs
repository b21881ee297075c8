//! Zero-inflated gamma (ZIG) emission law shared by all mixture components.
//!
//! An observation `y` in state `h` is exactly zero with probability `ε_h`
//! and otherwise follows a gamma law with shape `a_h` and rate `b_h`. The
//! zero is treated as a pure atom: `y = 0` contributes `ε_h` and `y > 0`
//! contributes `(1 − ε_h) · gamma_pdf(y)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::special::{digamma, ln_gamma, trigamma};

/// Bounds applied to ε during EM.
pub const EPSILON_FLOOR: f64 = 1e-10;
/// Bounds applied to gamma shape and rate during EM.
pub const SHAPE_RATE_MIN: f64 = 1e-8;
pub const SHAPE_RATE_MAX: f64 = 1e8;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZigParams {
    pub epsilon: f64,
    pub shape: f64,
    pub rate: f64,
}

impl ZigParams {
    pub fn new(epsilon: f64, shape: f64, rate: f64) -> Result<Self> {
        let p = Self { epsilon, shape, rate };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters with every field pushed inside the EM bounds.
    pub fn clamped(epsilon: f64, shape: f64, rate: f64) -> Self {
        Self {
            epsilon: epsilon.clamp(EPSILON_FLOOR, 1.0 - EPSILON_FLOOR),
            shape: shape.clamp(SHAPE_RATE_MIN, SHAPE_RATE_MAX),
            rate: rate.clamp(SHAPE_RATE_MIN, SHAPE_RATE_MAX),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(invalid(format!("gamma shape {} must be positive", self.shape)));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(invalid(format!("gamma rate {} must be positive", self.rate)));
        }
        Ok(())
    }

    /// `(1 − ε) · a / b`
    pub fn mean(&self) -> f64 {
        (1.0 - self.epsilon) * self.shape / self.rate
    }

    /// Log density of the atom-plus-gamma law, `−∞` where the mass is zero.
    pub fn log_density(&self, y: f64) -> Result<f64> {
        check_observation(y)?;
        Ok(self.ln_density_unchecked(y))
    }

    #[inline]
    pub(crate) fn ln_density_unchecked(&self, y: f64) -> f64 {
        if y == 0.0 {
            self.epsilon.ln()
        } else {
            (-self.epsilon).ln_1p() + gamma_ln_pdf(y, self.shape, self.rate)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.gen::<f64>() < self.epsilon {
            return 0.0;
        }
        let gamma = Gamma::new(self.shape, 1.0 / self.rate).expect("validated gamma parameters");
        gamma.sample(rng)
    }
}

/// Gamma log density with shape `a` and rate `b` at `y > 0`.
#[inline]
pub fn gamma_ln_pdf(y: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * y.ln() - rate * y
}

fn check_observation(y: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(invalid(format!("observation {y} is not finite")));
    }
    if y < 0.0 {
        return Err(invalid(format!("observation {y} is negative")));
    }
    Ok(())
}

/// Precomputed per-state constants for repeated density evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ZigKernel {
    ln_eps: f64,
    ln_norm: f64,
    shape_m1: f64,
    rate: f64,
}

impl ZigKernel {
    pub(crate) fn new(p: &ZigParams) -> Self {
        Self {
            ln_eps: p.epsilon.ln(),
            ln_norm: (-p.epsilon).ln_1p() + p.shape * p.rate.ln() - ln_gamma(p.shape),
            shape_m1: p.shape - 1.0,
            rate: p.rate,
        }
    }

    /// `ln_y` must be `y.ln()`; it is ignored for `y == 0`.
    #[inline]
    pub(crate) fn ln_density(&self, y: f64, ln_y: f64) -> f64 {
        if y == 0.0 {
            self.ln_eps
        } else {
            self.ln_norm + self.shape_m1 * ln_y - self.rate * y
        }
    }
}

/// Weighted sufficient statistics of the positive observations of one state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GammaSums {
    /// Σ w
    pub weight: f64,
    /// Σ w·y
    pub sum: f64,
    /// Σ w·log y
    pub sum_log: f64,
}

impl GammaSums {
    pub fn add(&mut self, w: f64, y: f64, ln_y: f64) {
        self.weight += w;
        self.sum += w * y;
        self.sum_log += w * ln_y;
    }

    pub fn merge(&mut self, other: &GammaSums) {
        self.weight += other.weight;
        self.sum += other.sum;
        self.sum_log += other.sum_log;
    }

    /// `log(weighted mean) − weighted mean of logs`, nonnegative by Jensen.
    pub fn log_mean_gap(&self) -> f64 {
        (self.sum / self.weight).ln() - self.sum_log / self.weight
    }
}

/// Weighted gamma maximum likelihood over strictly positive values.
///
/// Returns `(shape, rate)` maximizing `Σ w_t log gamma_pdf(y_t; a, b)`.
/// `init` optionally seeds the shape iteration.
pub fn weighted_gamma_mle(
    values: &[f64],
    weights: &[f64],
    init: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    let mut sums = GammaSums::default();
    let mut first: Option<f64> = None;
    let mut distinct = false;
    for (&y, &w) in values.iter().zip(weights) {
        if !(y > 0.0 && y.is_finite()) {
            return Err(invalid(format!("gamma fit needs strictly positive values, got {y}")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(invalid(format!("weight {w} is not a nonnegative number")));
        }
        if w > 0.0 {
            match first {
                None => first = Some(y),
                Some(v) if v != y => distinct = true,
                _ => {}
            }
            sums.add(w, y, y.ln());
        }
    }
    if !(sums.weight > 0.0) {
        return Err(Error::Estimation("gamma fit: total weight is zero".into()));
    }
    if !distinct {
        return Err(Error::Estimation(
            "gamma fit: weighted values have zero variance (fewer than two distinct values)".into(),
        ));
    }
    gamma_mle_from_sums(&sums, init.map(|(a, _)| a))
}

/// Solves the profiled score equation `log a − ψ(a) = log(S₁/W) − S₂/W`
/// by safeguarded Newton iteration on `u = log a`, then sets `b = a·W/S₁`.
pub fn gamma_mle_from_sums(sums: &GammaSums, init_shape: Option<f64>) -> Result<(f64, f64)> {
    let GammaSums { weight, sum, .. } = *sums;
    if !(weight > 0.0 && sum > 0.0) {
        return Err(Error::Estimation(format!(
            "gamma fit: degenerate sums (weight {weight}, weighted total {sum})"
        )));
    }
    let s = sums.log_mean_gap();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Estimation(format!(
            "gamma fit: zero weighted variance (log-mean gap {s})"
        )));
    }
    let a0 = match init_shape {
        Some(a) if a > 0.0 && a.is_finite() => a,
        _ => (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s),
    };
    // f(u) = u − ψ(e^u) − s is strictly decreasing in u.
    let f = |u: f64| u - digamma(u.exp()) - s;
    let mut u = a0.ln();
    let mut lo = u;
    let mut hi = u;
    let mut guard = 0;
    while f(lo) <= 0.0 {
        lo -= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Estimation("gamma fit: cannot bracket shape".into()));
        }
    }
    while f(hi) >= 0.0 {
        hi += 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Estimation("gamma fit: cannot bracket shape".into()));
        }
    }
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let a = u.exp();
        let fu = f(u);
        if fu > 0.0 {
            lo = lo.max(u);
        } else if fu < 0.0 {
            hi = hi.min(u);
        } else {
            converged = true;
            break;
        }
        let slope = 1.0 - a * trigamma(a);
        let mut next = u - fu / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - u).abs();
        u = next;
        if step < NEWTON_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Estimation("gamma fit: Newton iteration did not converge".into()));
    }
    let shape = u.exp();
    Ok((shape, shape * weight / sum))
}

/// `Σ w·1{y = 0} / Σ w`
pub fn weighted_zero_fraction(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    let (mut zero, mut total) = (0.0, 0.0);
    for (&y, &w) in values.iter().zip(weights) {
        check_observation(y)?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(invalid(format!("weight {w} is not a nonnegative number")));
        }
        total += w;
        if y == 0.0 {
            zero += w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::Estimation("zero fraction: total weight is zero".into()));
    }
    Ok(zero / total)
}
