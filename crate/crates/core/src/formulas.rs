//! Closed-form entropy functions and bound shapes.
//!
//! Everything here is a pure function of its arguments. Absolute constants
//! that only appear in asymptotic statements are never baked in; the bound
//! shapes take them as caller parameters where they occur.

use std::f64::consts::LN_2;

use crate::error::{domain, Result};

/// `x * ln(x)` with the convention `0 * ln 0 = 0`.
fn xlogx_half(weight: f64, log_arg_minus_one: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * log_arg_minus_one.ln_1p()
    }
}

/// Binary relative entropy of `Bernoulli((1+t)/2)` against a fair coin,
/// `k2(t) = ((1+t)/2) ln(1+t) + ((1-t)/2) ln(1-t)`.
///
/// Evaluated through `ln_1p` so that values near `|t| = 1` do not lose
/// precision.
pub fn k2(t: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&t) {
        return domain(format!("k2 requires t in [-1, 1], got {t}"));
    }
    let value = xlogx_half((1.0 + t) / 2.0, t) + xlogx_half((1.0 - t) / 2.0, -t);
    // Clamp rounding excursions to the exact range [0, ln 2].
    Ok(value.clamp(0.0, LN_2))
}

/// `psi2(eps) = ln 2 - k2(1 - eps)`.
pub fn psi2(eps: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&eps) {
        return domain(format!("psi2 requires eps in [0, 2], got {eps}"));
    }
    Ok(LN_2 - k2(1.0 - eps)?)
}

/// Relative entropy `H(a | p)` between Bernoulli laws.
pub fn rel_entropy(a: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return domain(format!("rel_entropy requires a in [0, 1], got {a}"));
    }
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("rel_entropy requires p in [0, 1], got {p}"));
    }
    if a == p {
        return Ok(0.0);
    }
    if p == 0.0 || p == 1.0 {
        return domain(format!("rel_entropy undefined for p = {p} with a = {a}"));
    }
    let head = if a == 0.0 { 0.0 } else { a * (a / p).ln() };
    let tail = if a == 1.0 {
        0.0
    } else {
        (1.0 - a) * ((1.0 - a) / (1.0 - p)).ln()
    };
    Ok((head + tail).max(0.0))
}

/// The simplified Chernoff lower bound `tp ln(t/e)` for `H(tp | p)`.
pub fn chernoff_simplified(t: f64, p: f64) -> Result<f64> {
    let tp = t * p;
    if !(0.0..=1.0).contains(&tp) || !(0.0..=1.0).contains(&p) {
        return domain(format!("chernoff bound requires 0 <= tp <= 1, got t={t}, p={p}"));
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    Ok(tp * (t.ln() - 1.0))
}

/// `max(log_z, n * delta)`. `log_z` may be `-inf`.
pub fn truncated_log(log_z: f64, n: usize, delta: f64) -> f64 {
    log_z.max(n as f64 * delta)
}

/// Sudakov lower bound `sqrt(eps ln n / 2)` on the expected maximum of `n`
/// unit-variance gaussians with pairwise correlation at most `1 - eps`.
pub fn sudakov_lower(eps: f64, n: usize) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return domain(format!("sudakov_lower requires eps in (0, 1], got {eps}"));
    }
    if n == 0 {
        return domain("sudakov_lower requires n >= 1");
    }
    Ok((eps * (n as f64).ln() / 2.0).sqrt())
}

/// Level and probability bound for the event that every coordinate of an
/// `eps`-separated gaussian process stays low.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllFailBound {
    /// `sqrt(eps ln n) / 2`
    pub threshold: f64,
    /// `n^(-eps/50)`
    pub probability_bound: f64,
}

pub fn all_fail_bound(eps: f64, n: usize) -> Result<AllFailBound> {
    if !(eps > 0.0 && eps <= 1.0) {
        return domain(format!("all_fail_bound requires eps in (0, 1], got {eps}"));
    }
    if n < 2 {
        return domain("all_fail_bound requires n >= 2");
    }
    let ln_n = (n as f64).ln();
    Ok(AllFailBound {
        threshold: (eps * ln_n).sqrt() / 2.0,
        probability_bound: (-eps / 50.0 * ln_n).exp(),
    })
}

/// `max(ln z, gamma)` for `z >= 0`.
pub fn log_gamma_trunc(z: f64, gamma: f64) -> f64 {
    if z <= 0.0 {
        gamma
    } else {
        z.ln().max(gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDeltaGap {
    /// `log_G(y) - log_G(x)`
    pub gap: f64,
    /// `log_G(y / x)`
    pub lower: f64,
}

/// Both sides of `0 >= log_G(y) - log_G(x) >= log_G(y/x)` for `1 >= x >= y >= 0`.
///
/// `ln(y/x)` is formed as `ln y - ln x` so that the floating-point values
/// obey the inequality exactly, not just up to rounding.
pub fn log_delta_gap(x: f64, y: f64, gamma: f64) -> Result<LogDeltaGap> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return domain(format!("log_delta_gap requires x, y in [0, 1], got x={x}, y={y}"));
    }
    if y > x {
        return domain(format!("log_delta_gap requires y <= x, got x={x}, y={y}"));
    }
    if !(gamma < 0.0) {
        return domain(format!("log_delta_gap requires gamma < 0, got {gamma}"));
    }
    let gap = log_gamma_trunc(y, gamma) - log_gamma_trunc(x, gamma);
    let lower = if y == 0.0 { gamma } else { (y.ln() - x.ln()).max(gamma) };
    Ok(LogDeltaGap { gap, lower })
}
