//! Desk-scale experiments: satisfiability threshold scans, free-energy
//! concentration, disorder universality, slow decrease under added
//! constraints, and the soft-truncation gap.
//!
//! Replicate `r` of an experiment always samples its disorder from
//! `stream.with_replicate(r)` (or a fork of `stream` per sub-run), so
//! results are reproducible and independent of the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::disorder::DisorderSpec;
use crate::error::{LabError, Result};
use crate::formulas::truncated_log;
use crate::partition::{soft_log_partition, Enumerator, Instance};
use crate::stats::{logistic_fit, percentile_interval, summarize, wilson, Summary, Z95};
use crate::stream::SeededStream;
use crate::verify::{conditioned_replicates, BOOTSTRAP_RESAMPLES};

/// Activation plus disorder law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub activation: Activation,
    pub spec: DisorderSpec,
}

impl Model {
    pub fn new(activation: Activation, spec: DisorderSpec) -> Self {
        Model { activation, spec }
    }

    fn instance(&self, n: usize, m: usize, stream: SeededStream) -> Result<Instance> {
        Instance::sample(&self.spec, self.activation.clone(), n, m, stream)
    }
}

/// Annealed threshold `ln 2 / (-ln p)` with `p` the gaussian mass of `u`.
pub fn first_moment_alpha(u: &Activation) -> Result<f64> {
    let p = u.gaussian_mass().p;
    if !(p > 0.0 && p < 1.0) {
        return Err(LabError::Domain(format!(
            "first_moment_alpha needs gaussian mass in (0, 1), got {p}"
        )));
    }
    Ok(std::f64::consts::LN_2 / -p.ln())
}

/// `M = round(N alpha)` with halves rounded up.
pub fn rows_for(n: usize, alpha: f64) -> Result<usize> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(LabError::Domain(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok((n as f64 * alpha + 0.5 + 1e-9).floor() as usize)
}

fn check_replicates(what: &str, replicates: usize, min: usize) -> Result<()> {
    if replicates < min {
        return Err(LabError::Domain(format!(
            "{what} needs >= {min} replicates, got {replicates}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCurve {
    pub n: usize,
    pub alpha_grid: Vec<f64>,
    pub m_values: Vec<usize>,
    pub solvable: Vec<usize>,
    pub p_solvable: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub replicates: usize,
    /// Logistic coefficients `(c0, c1)` of `P(alpha) = 1/(1 + exp(-(c0 + c1 alpha)))`.
    pub logistic: Option<(f64, f64)>,
    /// Fitted 0.5 crossing; present only when the data cross 0.5 inside the grid.
    pub alpha_hat: Option<f64>,
    pub alpha_hat_ci: Option<(f64, f64)>,
    /// Width of the fitted `[0.1, 0.9]` band, `2 ln 9 / |c1|`.
    pub width_10_90: Option<f64>,
    pub width_ci: Option<(f64, f64)>,
}

fn crossing_and_width(
    grid: &[f64],
    solvable: &[usize],
    trials: &[usize],
) -> (Option<(f64, f64)>, Option<f64>, Option<f64>) {
    let Some((c0, c1)) = logistic_fit(grid, solvable, trials) else {
        return (None, None, None);
    };
    let fractions: Vec<f64> = solvable
        .iter()
        .zip(trials)
        .map(|(&s, &t)| s as f64 / t as f64)
        .collect();
    let crosses = fractions.iter().any(|&p| p >= 0.5) && fractions.iter().any(|&p| p <= 0.5);
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let alpha_hat = (c1 < 0.0 && crosses)
        .then(|| -c0 / c1)
        .filter(|a| (lo..=hi).contains(a));
    let width = (c1 < 0.0).then(|| 2.0 * 9f64.ln() / c1.abs());
    (Some((c0, c1)), alpha_hat, width)
}

/// Fraction of satisfiable instances across `alpha_grid`.
///
/// Each replicate draws `max M` rows once; the instance at each grid point
/// is its prefix with `M = round(N alpha)` rows, so satisfiability is
/// monotone in `alpha` on every replicate and one traversal serves the
/// whole grid.
pub fn threshold_scan(
    model: &Model,
    n: usize,
    alpha_grid: &[f64],
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<ThresholdCurve> {
    check_replicates("threshold_scan", replicates, 100)?;
    if alpha_grid.len() < 2 {
        return Err(LabError::Domain("threshold_scan needs at least two grid points".into()));
    }
    let m_values = alpha_grid.iter().map(|&a| rows_for(n, a)).collect::<Result<Vec<_>>>()?;
    let m_max = m_values.iter().copied().max().unwrap_or(0);
    if n > enumerator.cap {
        return Err(LabError::CapExceeded { n, cap: enumerator.cap });
    }
    let outcomes: Vec<Vec<bool>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let inst = model.instance(n, m_max, stream.with_replicate(r as u64))?;
            let z = enumerator.prefix_counts(&inst, &m_values)?;
            Ok(z.into_iter().map(|c| c > 0).collect())
        })
        .collect::<Result<_>>()?;

    let tally = |rows: &mut dyn Iterator<Item = &Vec<bool>>| {
        let mut s = vec![0usize; alpha_grid.len()];
        for row in rows {
            for (acc, &ok) in s.iter_mut().zip(row) {
                *acc += ok as usize;
            }
        }
        s
    };
    let solvable = tally(&mut outcomes.iter());
    let trials = vec![replicates; alpha_grid.len()];
    let (logistic, alpha_hat, width) = crossing_and_width(alpha_grid, &solvable, &trials);

    let boot = stream.fork(0xB007);
    let (mut alphas, mut widths) = (Vec::new(), Vec::new());
    for b in 0..BOOTSTRAP_RESAMPLES {
        let mut rng = boot.rng(b as u64);
        let s = tally(&mut (0..replicates).map(|_| &outcomes[rng.random_range(0..replicates)]));
        let (_, a, w) = crossing_and_width(alpha_grid, &s, &trials);
        alphas.extend(a);
        widths.extend(w);
    }
    let enough = |v: &Vec<f64>| v.len() * 2 >= BOOTSTRAP_RESAMPLES;

    Ok(ThresholdCurve {
        n,
        alpha_grid: alpha_grid.to_vec(),
        p_solvable: solvable.iter().map(|&s| s as f64 / replicates as f64).collect(),
        ci: solvable.iter().map(|&s| wilson(s, replicates, Z95)).collect(),
        m_values,
        solvable,
        replicates,
        logistic,
        alpha_hat,
        alpha_hat_ci: alpha_hat.and(if enough(&alphas) {
            percentile_interval(&alphas, 0.95)
        } else {
            None
        }),
        width_10_90: width,
        width_ci: width.and(if enough(&widths) {
            percentile_interval(&widths, 0.95)
        } else {
            None
        }),
    })
}

/// `N^{-1} max(ln Z, N delta)` for each replicate.
fn free_energies(
    model: &Model,
    n: usize,
    m: usize,
    delta: f64,
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<Vec<f64>> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let inst = model.instance(n, m, stream.with_replicate(r as u64))?;
            let res = enumerator.count_exact(&inst, delta)?;
            Ok(truncated_log(res.log_z, n, delta) / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub m: usize,
    pub mean: f64,
    pub std: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub alpha: f64,
    pub delta: f64,
    pub replicates: usize,
    pub rows: Vec<ConcentrationRow>,
}

/// Mean and spread of the truncated free energy for each `n`. Dimension `n`
/// uses the sub-stream `stream.fork(n)`.
pub fn concentration_scan(
    model: &Model,
    n_list: &[usize],
    alpha: f64,
    delta: f64,
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<ConcentrationReport> {
    check_replicates("concentration_scan", replicates, 50)?;
    let rows = n_list
        .iter()
        .map(|&n| {
            let m = rows_for(n, alpha)?;
            let s = summarize(&free_energies(
                model,
                n,
                m,
                delta,
                replicates,
                stream.fork(n as u64),
                enumerator,
            )?);
            Ok(ConcentrationRow {
                n,
                m,
                mean: s.mean,
                std: s.std,
                se: s.se,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConcentrationReport {
        alpha,
        delta,
        replicates,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniversalityEntry {
    pub spec: DisorderSpec,
    pub mean: f64,
    pub std: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniversalityPair {
    pub first: usize,
    pub second: usize,
    pub difference: f64,
    pub combined_se: f64,
    /// `3 combined_se + slack / sqrt(n)`
    pub margin: f64,
    pub within_margin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniversalityReport {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub delta: f64,
    pub slack: f64,
    pub replicates: usize,
    pub entries: Vec<UniversalityEntry>,
    pub pairs: Vec<UniversalityPair>,
}

/// Mean truncated free energy under each disorder law with identical model
/// parameters. Law `i` draws from `stream.fork(i)`.
#[allow(clippy::too_many_arguments)]
pub fn universality_compare(
    activation: &Activation,
    specs: &[DisorderSpec],
    n: usize,
    alpha: f64,
    delta: f64,
    slack: f64,
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<UniversalityReport> {
    if specs.len() < 2 {
        return Err(LabError::Domain(
            "universality_compare needs at least two disorder laws".into(),
        ));
    }
    check_replicates("universality_compare", replicates, 2)?;
    let m = rows_for(n, alpha)?;
    let entries: Vec<UniversalityEntry> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let model = Model::new(activation.clone(), spec.clone());
            let Summary { mean, std, se, .. } = summarize(&free_energies(
                &model,
                n,
                m,
                delta,
                replicates,
                stream.fork(i as u64),
                enumerator,
            )?);
            Ok(UniversalityEntry {
                spec: spec.clone(),
                mean,
                std,
                se,
            })
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let difference = (entries[i].mean - entries[j].mean).abs();
            let combined_se = entries[i].se.hypot(entries[j].se);
            let margin = 3.0 * combined_se + slack / (n as f64).sqrt();
            pairs.push(UniversalityPair {
                first: i,
                second: j,
                difference,
                combined_se,
                margin,
                within_margin: difference <= margin,
            });
        }
    }
    Ok(UniversalityReport {
        n,
        m,
        alpha,
        delta,
        slack,
        replicates,
        entries,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowDecrease {
    pub n: usize,
    pub m: usize,
    /// Added rows, `round(N rho)`.
    pub extra: usize,
    pub delta: f64,
    /// Replicates meeting `Z_M >= exp(2 N delta)`.
    pub conditioned: usize,
    pub attempted: usize,
    /// Conditioned replicates with `Z_{M + extra} < exp(N delta)`.
    pub events: usize,
    pub p_hat: f64,
    pub ci: (f64, f64),
}

/// `P(Z_{M + N rho} < e^{N delta} | Z_M >= e^{2 N delta})` on nested instances:
/// the extra rows extend the same replicate stream.
#[allow(clippy::too_many_arguments)]
pub fn slow_decrease(
    model: &Model,
    n: usize,
    m: usize,
    rho: f64,
    delta: f64,
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<SlowDecrease> {
    check_replicates("slow_decrease", replicates, 1)?;
    if n > enumerator.cap {
        return Err(LabError::CapExceeded { n, cap: enumerator.cap });
    }
    let extra = rows_for(n, rho)?;
    let nd = n as f64 * delta;
    let run = conditioned_replicates(replicates, "slow_decrease", |r| {
        let inst = model.instance(n, m + extra, stream.with_replicate(r))?;
        let z = enumerator.prefix_counts(&inst, &[m, m + extra])?;
        if z[0] == 0 || (z[0] as f64).ln() < 2.0 * nd {
            return Ok(None);
        }
        Ok(Some(z[1] == 0 || (z[1] as f64).ln() < nd))
    })?;
    let conditioned = run.kept.len();
    let events = run.kept.iter().filter(|&&e| e).count();
    Ok(SlowDecrease {
        n,
        m,
        extra,
        delta,
        conditioned,
        attempted: run.attempted,
        events,
        p_hat: events as f64 / conditioned as f64,
        ci: wilson(events, conditioned, Z95),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TempGapReport {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub a_list: Vec<f64>,
    /// Mean over replicates of the gap at each level.
    pub mean_gap: Vec<f64>,
    pub max_gap: Vec<f64>,
    /// `per_replicate[r][i]`: gap of replicate `r` at `a_list[i]`.
    pub per_replicate: Vec<Vec<f64>>,
    /// Replicates whose gap never increases as `A` grows.
    pub monotone: usize,
}

/// `N^{-1} |max(ln Z(u_A), N delta) - max(ln Z, N delta)|` for each level `A`,
/// where `Z(u_A) = sum_sigma exp(-A violations(sigma))`.
#[allow(clippy::too_many_arguments)]
pub fn temp_truncation_gap(
    model: &Model,
    n: usize,
    alpha: f64,
    a_list: &[f64],
    delta: f64,
    replicates: usize,
    stream: SeededStream,
    enumerator: &Enumerator,
) -> Result<TempGapReport> {
    check_replicates("temp_truncation_gap", replicates, 1)?;
    if a_list.is_empty() || a_list.iter().any(|&a| !(a > 0.0)) {
        return Err(LabError::Domain("truncation levels must be positive".into()));
    }
    let m = rows_for(n, alpha)?;
    let per_replicate: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let inst = model.instance(n, m, stream.with_replicate(r as u64))?;
            let h = enumerator.violation_histogram(&inst)?;
            let hard = truncated_log(
                if h[0] > 0 {
                    (h[0] as f64).ln()
                } else {
                    f64::NEG_INFINITY
                },
                n,
                delta,
            );
            Ok(a_list
                .iter()
                .map(|&a| (truncated_log(soft_log_partition(&h, a), n, delta) - hard).abs() / n as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mean_gap = (0..a_list.len())
        .map(|i| per_replicate.iter().map(|g| g[i]).sum::<f64>() / replicates as f64)
        .collect();
    let max_gap = (0..a_list.len())
        .map(|i| per_replicate.iter().map(|g| g[i]).fold(0.0, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..a_list.len()).collect();
    order.sort_by(|&i, &j| a_list[i].total_cmp(&a_list[j]));
    let monotone = per_replicate
        .iter()
        .filter(|g| order.windows(2).all(|w| g[w[1]] <= g[w[0]]))
        .count();
    Ok(TempGapReport {
        n,
        m,
        delta,
        a_list: a_list.to_vec(),
        mean_gap,
        max_gap,
        per_replicate,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_moment_alpha_examples() {
        assert!((first_moment_alpha(&Activation::half_space(0.0).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let a = first_moment_alpha(&Activation::symmetric_interval(0.674490).unwrap()).unwrap();
        assert!((a - 1.0).abs() < 1e-4, "{a}");
        let a = first_moment_alpha(&Activation::symmetric_interval(0.318639).unwrap()).unwrap();
        assert!((a - 0.5).abs() < 1e-4, "{a}");
        assert!(first_moment_alpha(&Activation::zero()).is_err());
        assert!(first_moment_alpha(&Activation::interval(-1e300, 1e300).unwrap()).is_err());
    }

    #[test]
    fn rows_round_half_up() {
        assert_eq!(rows_for(20, 0.7).unwrap(), 14);
        assert_eq!(rows_for(10, 0.25).unwrap(), 3);
        assert_eq!(rows_for(12, 0.6).unwrap(), 7);
        assert_eq!(rows_for(12, 0.0).unwrap(), 0);
        assert!(rows_for(12, -0.1).is_err());
    }

    #[test]
    fn threshold_scan_trivial_points() {
        let model = Model::new(Activation::zero(), DisorderSpec::gaussian());
        let curve = threshold_scan(
            &model,
            8,
            &[0.0, 0.5, 1.0],
            100,
            SeededStream::new(1),
            &Enumerator::default(),
        )
        .unwrap();
        assert_eq!(curve.p_solvable, vec![1.0, 0.0, 0.0]);
        let model = Model::new(Activation::half_space(0.0).unwrap(), DisorderSpec::gaussian());
        let curve = threshold_scan(
            &model,
            10,
            &[0.0, 0.5, 1.0, 1.5],
            100,
            SeededStream::new(1),
            &Enumerator::default(),
        )
        .unwrap();
        assert_eq!(curve.p_solvable[0], 1.0);
        assert!(curve.p_solvable.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn concentration_without_constraints_is_deterministic() {
        let model = Model::new(Activation::half_space(0.0).unwrap(), DisorderSpec::gaussian());
        let rep = concentration_scan(
            &model,
            &[6, 8],
            0.0,
            0.05,
            50,
            SeededStream::new(2),
            &Enumerator::default(),
        )
        .unwrap();
        for row in &rep.rows {
            assert_eq!(row.std, 0.0);
            assert!((row.mean - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let again = concentration_scan(
            &model,
            &[6, 8],
            0.0,
            0.05,
            50,
            SeededStream::new(2),
            &Enumerator::default(),
        )
        .unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn universality_same_law_twice() {
        let act = Activation::half_space(0.0).unwrap();
        let rep = universality_compare(
            &act,
            &[DisorderSpec::gaussian(), DisorderSpec::gaussian()],
            10,
            0.4,
            0.05,
            0.0,
            200,
            SeededStream::new(3),
            &Enumerator::default(),
        )
        .unwrap();
        assert_eq!(rep.pairs.len(), 1);
        assert!(rep.pairs[0].difference <= 3.0 * rep.pairs[0].combined_se);
        assert_ne!(rep.entries[0].mean, rep.entries[1].mean);
    }

    #[test]
    fn slow_decrease_trivial_cases() {
        let model = Model::new(Activation::half_space(0.0).unwrap(), DisorderSpec::gaussian());
        let e = Enumerator::default();
        let none = slow_decrease(&model, 12, 2, 0.0, 0.1, 50, SeededStream::new(4), &e).unwrap();
        assert_eq!(none.p_hat, 0.0);
        let wide = Model::new(Activation::interval(-1e6, 1e6).unwrap(), DisorderSpec::gaussian());
        let one = slow_decrease(&wide, 12, 2, 1.0 / 12.0, 0.1, 50, SeededStream::new(4), &e).unwrap();
        assert_eq!(one.extra, 1);
        assert_eq!(one.p_hat, 0.0);
    }

    #[test]
    fn temp_gap_monotone_and_vanishing() {
        let model = Model::new(Activation::symmetric_interval(0.6).unwrap(), DisorderSpec::gaussian());
        let a_list = [0.5, 1.0, 2.0, 5.0, 10.0, 50.0];
        let rep = temp_truncation_gap(
            &model,
            12,
            0.5,
            &a_list,
            0.05,
            20,
            SeededStream::new(5),
            &Enumerator::default(),
        )
        .unwrap();
        for g in &rep.per_replicate {
            assert!(g.windows(2).all(|w| w[0] >= w[1]), "{g:?}");
            assert!(g[5] < 1e-8);
        }
        let full = Model::new(Activation::interval(-1e6, 1e6).unwrap(), DisorderSpec::gaussian());
        let rep = temp_truncation_gap(
            &full,
            10,
            0.5,
            &a_list,
            0.05,
            5,
            SeededStream::new(5),
            &Enumerator::default(),
        )
        .unwrap();
        assert!(rep.max_gap.iter().all(|&g| g == 0.0));
    }
}
