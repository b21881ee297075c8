//! Special functions used by the gamma likelihood.
//!
//! `digamma` and `trigamma` shift the argument upward with the recurrence
//! ψ(x) = ψ(x + 1) − 1/x until x ≥ 10, then evaluate the asymptotic
//! Bernoulli series. Absolute accuracy is about 1e-15 for x > 0.

pub use statrs::function::gamma::ln_gamma;

const ASYMPTOTIC_FROM: f64 = 10.0;

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0. Returns NaN otherwise.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { f64::INFINITY } else { f64::NAN };
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // -Σ B_2n / (2n x^2n), n = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Trigamma ψ'(x) for x > 0. Returns NaN otherwise.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { 0.0 } else { f64::NAN };
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Σ B_2n / x^(2n+1), n = 1..7
    let series = inv
        * inv2
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2
                        * (1.0 / 42.0
                            - inv2
                                * (1.0 / 30.0
                                    - inv2
                                        * (5.0 / 66.0
                                            - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + series
}

/// `log Σ exp(x_i)`, returning −∞ for an empty slice or all −∞ inputs.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
