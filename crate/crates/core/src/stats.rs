//! Small statistics helpers shared by the Monte Carlo modules.

use serde::Serialize;

/// Sample summary with `(n-1)`-denominator standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// `std / sqrt(count)`
    pub se: f64,
}

/// Mean and spread computed relative to the first sample, so a constant
/// sample has spread exactly zero.
pub fn summarize(xs: &[f64]) -> Summary {
    let count = xs.len();
    if count == 0 {
        return Summary {
            count,
            mean: f64::NAN,
            std: f64::NAN,
            se: f64::NAN,
        };
    }
    let pivot = xs[0];
    let shifted_mean = xs.iter().map(|x| x - pivot).sum::<f64>() / count as f64;
    let mean = pivot + shifted_mean;
    let std = if count < 2 {
        0.0
    } else {
        let ss: f64 = xs.iter().map(|x| (x - pivot - shifted_mean).powi(2)).sum();
        (ss / (count - 1) as f64).sqrt()
    };
    Summary {
        count,
        mean,
        std,
        se: std / (count as f64).sqrt(),
    }
}

/// Wilson score interval for `successes / trials` at normal quantile `z`.
pub fn wilson(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

pub const Z95: f64 = 1.959_963_984_540_054;

/// Binomial standard error `sqrt(p(1-p)/n)`.
pub fn binomial_se(p: f64, trials: usize) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Ordinary least-squares `(intercept, slope)`; `None` with fewer than two distinct `x`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Maximum-likelihood logistic regression `P(x) = 1/(1+exp(-(c0 + c1 x)))`
/// on grouped binomial data, by Newton iteration with a tiny ridge on `c1`
/// so perfectly separated data still yields a finite (steep) fit.
pub fn logistic_fit(xs: &[f64], successes: &[usize], trials: &[usize]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let ridge = 1e-4;
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    // Centered parametrization c0 + c1 (x - mx) keeps the Hessian well conditioned.
    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (mut g0, mut g1) = (0.0, -ridge * b1);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, ridge);
        for ((&x, &s), &t) in xs.iter().zip(successes).zip(trials) {
            if t == 0 {
                continue;
            }
            let u = x - mx;
            let p = 1.0 / (1.0 + (-(b0 + b1 * u)).exp());
            let w = t as f64 * p * (1.0 - p);
            let r = s as f64 - t as f64 * p;
            g0 += r;
            g1 += r * u;
            h00 += w;
            h01 += w * u;
            h11 += w * u * u;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det.abs() > 1e-300) {
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        // Damp very large Newton steps.
        let scale = (10.0 / d0.abs().max(d1.abs()).max(10.0)).min(1.0);
        b0 += scale * d0;
        b1 += scale * d1;
        if d0.abs().max(d1.abs()) < 1e-10 {
            break;
        }
    }
    if !(b0.is_finite() && b1.is_finite()) {
        return None;
    }
    Some((b0 - b1 * mx, b1))
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Central `level` percentile interval of `values` (NaNs dropped).
pub fn percentile_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - level) / 2.0;
    Some((quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail)))
}
