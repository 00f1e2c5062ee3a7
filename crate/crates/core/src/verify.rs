//! Monte Carlo frequency checks with confidence intervals: the add-one
//! ratio tail, the all-fail event of separated gaussian processes, the
//! concentration of canonical-process suprema, and the CLT gap for
//! functions of a few linear forms.
//!
//! Fitted constants are reported as measurements. Nothing here asserts a
//! bound with a specific unknown constant.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::Activation;
use crate::disorder::DisorderSpec;
use crate::error::{LabError, Result};
use crate::formulas::{all_fail_bound, sudakov_lower, AllFailBound};
use crate::partition::{Enumerator, Instance};
use crate::stats::{least_squares, percentile_interval, summarize, wilson, Z95};
use crate::stream::SeededStream;

/// Bootstrap resamples used for slope intervals.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Acceptance rate of a conditioning event below which a warning is logged.
const LOW_ACCEPTANCE: f64 = 0.5;
/// Attempts allowed per requested conditioned replicate.
const ATTEMPTS_PER_REPLICATE: usize = 50;

/// Outcome of drawing replicates subject to a conditioning event.
#[derive(Debug, Clone)]
pub(crate) struct Conditioned<T> {
    pub kept: Vec<T>,
    pub attempted: usize,
}

/// Evaluates replicate indices `0, 1, 2, ...` in batches until `requested`
/// replicates pass the conditioning event (`Some`), keeping the first ones in
/// index order. The result does not depend on the thread count.
pub(crate) fn conditioned_replicates<T, F>(requested: usize, what: &str, f: F) -> Result<Conditioned<T>>
where
    T: Send,
    F: Fn(u64) -> Result<Option<T>> + Sync,
{
    let max_attempts = requested.saturating_mul(ATTEMPTS_PER_REPLICATE).max(requested);
    let mut kept = Vec::with_capacity(requested);
    let mut next = 0usize;
    while kept.len() < requested && next < max_attempts {
        let missing = requested - kept.len();
        let batch = if next == 0 {
            requested
        } else {
            missing.max(requested / 4).max(1)
        };
        let end = (next + batch).min(max_attempts);
        let results: Vec<Result<Option<T>>> = (next..end).into_par_iter().map(|r| f(r as u64)).collect();
        for r in results {
            if let Some(v) = r? {
                if kept.len() < requested {
                    kept.push(v);
                }
            }
        }
        next = end;
    }
    if kept.is_empty() {
        return Err(LabError::ConditioningEmpty(format!(
            "{what}: no replicate out of {next} met the conditioning event"
        )));
    }
    let rate = kept.len() as f64 / next as f64;
    if rate < LOW_ACCEPTANCE {
        log::warn!(
            "{what}: conditioning acceptance rate {rate:.3} ({} kept of {next})",
            kept.len()
        );
    }
    if kept.len() < requested {
        log::warn!(
            "{what}: only {} of {requested} conditioned replicates after {next} attempts",
            kept.len()
        );
    }
    Ok(Conditioned { kept, attempted: next })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AddOneModel {
    pub spec: DisorderSpec,
    pub activation: Activation,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub w_grid: Vec<f64>,
    /// Fraction of conditioned replicates with `Z_{M+1}/Z_M <= exp(-w)`.
    pub p_hat: Vec<f64>,
    pub hits: Vec<usize>,
    /// Wilson 95% intervals.
    pub ci: Vec<(f64, f64)>,
    /// Conditioned replicates used.
    pub replicates: usize,
    /// Replicates drawn and rejected by `Z_M >= exp(N delta)`.
    pub discarded: usize,
    /// Replicates with `Z_{M+1} = 0`, counted at every `w`.
    pub zero_ratio: usize,
    /// Least-squares slope of `ln p_hat` against `w` over points with `p_hat > 0`.
    pub fitted_slope: Option<f64>,
    /// `-1 / fitted_slope`
    pub fitted_c_delta: Option<f64>,
    /// Bootstrap 95% percentile interval for the slope.
    pub slope_ci: Option<(f64, f64)>,
}

/// `-ln(Z_{M+1}/Z_M)` per conditioned replicate; `+inf` when `Z_{M+1} = 0`.
fn tail_hits(neg_log_ratios: &[f64], w_grid: &[f64]) -> Vec<usize> {
    w_grid
        .iter()
        .map(|&w| neg_log_ratios.iter().filter(|&&x| x >= w).count())
        .collect()
}

fn log_linear_slope(w_grid: &[f64], hits: &[usize], total: usize) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = w_grid
        .iter()
        .zip(hits)
        .filter(|(_, &h)| h > 0)
        .map(|(&w, &h)| (w, (h as f64 / total as f64).ln()))
        .unzip();
    least_squares(&xs, &ys).map(|(_, slope)| slope)
}

fn check_w_grid(w_grid: &[f64]) -> Result<()> {
    if w_grid.is_empty() {
        return Err(LabError::Domain("w grid is empty".into()));
    }
    if w_grid.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(LabError::Domain("w grid values must be finite and >= 0".into()));
    }
    if w_grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(LabError::Domain("w grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Tail of the add-one ratio conditioned on `Z_M >= exp(N delta)`.
///
/// Replicate `r` samples `M + 1` rows from `stream.with_replicate(r)`; the
/// last row is the fresh constraint, so `Z_M` and `Z_{M+1}` come from one
/// traversal.
pub fn tail_addone(
    model: &AddOneModel,
    w_grid: &[f64],
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<TailEstimate> {
    if replicates < 100 {
        return Err(LabError::Domain(format!(
            "tail_addone needs >= 100 replicates, got {replicates}"
        )));
    }
    check_w_grid(w_grid)?;
    let (n, m) = (model.n, model.m);
    if n > enumerator.cap {
        return Err(LabError::CapExceeded { n, cap: enumerator.cap });
    }
    let floor = n as f64 * model.delta;
    let run = conditioned_replicates(replicates, "tail_addone", |r| {
        let inst = Instance::sample(
            &model.spec,
            model.activation.clone(),
            n,
            m + 1,
            stream.with_replicate(r),
        )?;
        let z = enumerator.prefix_counts(&inst, &[m, m + 1])?;
        if z[0] == 0 || (z[0] as f64).ln() < floor {
            return Ok(None);
        }
        Ok(Some(if z[1] == 0 {
            f64::INFINITY
        } else {
            (z[0] as f64).ln() - (z[1] as f64).ln()
        }))
    })?;
    let values = run.kept;
    let total = values.len();
    let hits = tail_hits(&values, w_grid);
    let p_hat: Vec<f64> = hits.iter().map(|&h| h as f64 / total as f64).collect();
    let ci = hits.iter().map(|&h| wilson(h, total, Z95)).collect();
    let fitted_slope = log_linear_slope(w_grid, &hits, total);

    let boot_rng_stream = stream.fork(0xB007);
    let slopes: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .filter_map(|b| {
            let mut rng = boot_rng_stream.rng(b as u64);
            let resample: Vec<f64> = (0..total).map(|_| values[rng.random_range(0..total)]).collect();
            log_linear_slope(w_grid, &tail_hits(&resample, w_grid), total)
        })
        .collect();
    let slope_ci = if slopes.len() * 2 >= BOOTSTRAP_RESAMPLES {
        percentile_interval(&slopes, 0.95)
    } else {
        None
    };

    Ok(TailEstimate {
        w_grid: w_grid.to_vec(),
        p_hat,
        hits,
        ci,
        replicates: total,
        discarded: run.attempted - total,
        zero_ratio: values.iter().filter(|v| v.is_infinite()).count(),
        fitted_slope,
        fitted_c_delta: fitted_slope.map(|s| -1.0 / s),
        slope_ci,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllFailEstimate {
    pub eps: f64,
    pub n_process: usize,
    pub replicates: usize,
    /// Empirical `P(max_i u_i <= threshold)`.
    pub p_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub threshold: f64,
    pub bound: f64,
}

/// Largest process size accepted by [`all_fail_frequency`].
pub const MAX_PROCESS: usize = 1 << 14;

/// Frequency of `max_i u_i <= sqrt(eps ln n)/2` for the equicorrelated
/// process `u_i = sqrt(1 - eps) z + sqrt(eps) z_i`, whose pairwise
/// correlations are exactly `1 - eps`.
pub fn all_fail_frequency(
    eps: f64,
    n_process: usize,
    replicates: usize,
    stream: SeededStream,
) -> Result<AllFailEstimate> {
    if n_process > MAX_PROCESS {
        return Err(LabError::Domain(format!(
            "n_process must be <= {MAX_PROCESS}, got {n_process}"
        )));
    }
    if replicates == 0 {
        return Err(LabError::Domain("all_fail_frequency needs replicates >= 1".into()));
    }
    let AllFailBound {
        threshold,
        probability_bound,
    } = all_fail_bound(eps, n_process)?;
    let (common, own) = ((1.0 - eps).sqrt(), eps.sqrt());
    let hits: usize = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.rng(r as u64);
            let z: f64 = rng.sample(StandardNormal);
            let shared = common * z;
            (0..n_process).all(|_| shared + own * rng.sample::<f64, _>(StandardNormal) <= threshold) as usize
        })
        .sum();
    let p = hits as f64 / replicates as f64;
    Ok(AllFailEstimate {
        eps,
        n_process,
        replicates,
        p_hat: p,
        se: (p * (1.0 - p) / replicates as f64).sqrt(),
        ci: wilson(hits, replicates, Z95),
        threshold,
        bound: probability_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub u: f64,
    /// Empirical `P(|f - mean f| >= u)`.
    pub p_hat: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupConcentration {
    pub set_size: usize,
    pub n: usize,
    pub replicates: usize,
    /// Estimate of `E max_{sigma in S} (xi, sigma)/sqrt N`.
    pub mean_sup: f64,
    pub se: f64,
    pub std: f64,
    pub deviation_tail: Vec<DeviationRow>,
    /// `sudakov_lower(eps, |S|)` for the certified separation `eps`.
    pub sudakov_floor: f64,
    /// `mean_sup / sudakov_floor` (absent when the floor is 0).
    pub fitted_c: Option<f64>,
}

/// Largest set accepted by [`sup_concentration`].
pub const MAX_SUP_SET: usize = 1 << 14;

/// Mean and deviation tail of `max_{sigma in S} (xi, sigma)/sqrt N`, with
/// the Sudakov floor for a caller-certified pairwise separation `eps`.
pub fn sup_concentration(
    spec: &DisorderSpec,
    s: &[Vec<i8>],
    eps_certified: f64,
    u_grid: &[f64],
    replicates: usize,
    stream: SeededStream,
) -> Result<SupConcentration> {
    if s.is_empty() {
        return Err(LabError::Domain("sup_concentration needs a nonempty set".into()));
    }
    if s.len() > MAX_SUP_SET {
        return Err(LabError::Domain(format!(
            "set size must be <= {MAX_SUP_SET}, got {}",
            s.len()
        )));
    }
    if replicates < 2 {
        return Err(LabError::Domain("sup_concentration needs replicates >= 2".into()));
    }
    let n = s[0].len();
    if n == 0 || s.iter().any(|v| v.len() != n) {
        return Err(LabError::Shape(
            "configurations must share one nonzero dimension".into(),
        ));
    }
    if s.iter().flatten().any(|&x| x != 1 && x != -1) {
        return Err(LabError::Domain("configurations must have entries +-1".into()));
    }
    let floor = sudakov_lower(eps_certified, s.len())?;
    let flat: Vec<f64> = s.iter().flatten().map(|&x| x as f64).collect();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let sups: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let xi = spec.sample_row(r, n, stream);
            flat.chunks_exact(n)
                .map(|sigma| sigma.iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
                * inv_sqrt_n
        })
        .collect();
    let summary = summarize(&sups);
    let deviation_tail = u_grid
        .iter()
        .map(|&u| {
            let hits = sups.iter().filter(|&&x| (x - summary.mean).abs() >= u).count();
            DeviationRow {
                u,
                p_hat: hits as f64 / replicates as f64,
                ci: wilson(hits, replicates, Z95),
            }
        })
        .collect();
    Ok(SupConcentration {
        set_size: s.len(),
        n,
        replicates,
        mean_sup: summary.mean,
        se: summary.se,
        std: summary.std,
        deviation_tail,
        sudakov_floor: floor,
        fitted_c: (floor > 0.0).then(|| summary.mean / floor),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEstimate {
    /// `|mean of F(Sigma xi/sqrt N) - F(Sigma g/sqrt N)|`
    pub value: f64,
    /// Signed mean difference.
    pub signed: f64,
    pub se: f64,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
}

/// Largest tuple size accepted by [`clt_gap`].
pub const MAX_TUPLE: usize = 8;
/// Largest dimension accepted by [`clt_gap`].
pub const MAX_CLT_DIM: usize = 10_000;

/// `|E F(Sigma xi/sqrt N) - E F(Sigma g/sqrt N)|` for `F(x) = prod_k f(x_k)`,
/// estimated with one uniformly random sign matrix `Sigma` (`p x N`) shared
/// by both terms of each replicate.
pub fn clt_gap(
    f: &Activation,
    p: usize,
    n: usize,
    spec: &DisorderSpec,
    replicates: usize,
    stream: SeededStream,
) -> Result<GapEstimate> {
    if p == 0 || p > MAX_TUPLE {
        return Err(LabError::Domain(format!(
            "tuple size must be in 1..={MAX_TUPLE}, got {p}"
        )));
    }
    if n == 0 || n > MAX_CLT_DIM {
        return Err(LabError::Domain(format!(
            "dimension must be in 1..={MAX_CLT_DIM}, got {n}"
        )));
    }
    if replicates < 2 {
        return Err(LabError::Domain("clt_gap needs replicates >= 2".into()));
    }
    let gaussian = DisorderSpec::gaussian();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let diffs: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut signs = stream.rng(3 * r as u64);
            let mut xi_rng = stream.rng(3 * r as u64 + 1);
            let mut g_rng = stream.rng(3 * r as u64 + 2);
            let xi: Vec<f64> = (0..n).map(|_| spec.sample(&mut xi_rng)).collect();
            let g: Vec<f64> = (0..n).map(|_| gaussian.sample(&mut g_rng)).collect();
            let (mut f_xi, mut f_g) = (true, true);
            for _ in 0..p {
                let (mut a, mut b) = (0.0, 0.0);
                for i in 0..n {
                    if signs.random::<bool>() {
                        a += xi[i];
                        b += g[i];
                    } else {
                        a -= xi[i];
                        b -= g[i];
                    }
                }
                f_xi &= f.eval(a * inv_sqrt_n);
                f_g &= f.eval(b * inv_sqrt_n);
            }
            f_xi as u8 as f64 - f_g as u8 as f64
        })
        .collect();
    let s = summarize(&diffs);
    Ok(GapEstimate {
        value: s.mean.abs(),
        signed: s.mean,
        se: s.se,
        n,
        p,
        replicates,
    })
}
