//! Disorder distributions for the constraint vectors.
//!
//! Every family is standardized to mean 0 and variance 1. Families whose
//! support is a centered integer lattice (Rademacher, integer-valued discrete
//! laws) are stored as exact integers times a scale, so constraint values can
//! be compared against thresholds without float ties.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::gamma::ln_gamma;

use crate::error::{LabError, Result};
use crate::stream::SeededStream;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Gaussian,
    Rademacher,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
    /// Density proportional to `exp(-|x|^alpha)`, rescaled to unit variance.
    ExponentialPower {
        alpha: f64,
    },
    /// Finite support given as `(value, probability)` pairs before standardization.
    Discrete {
        support: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSpec {
    family: Family,
    nu: Option<f64>,
    /// Standardization `(raw - shift) * scale` applied to discrete supports.
    shift: f64,
    scale: f64,
    lattice: bool,
}

impl DisorderSpec {
    pub fn new(family: Family) -> Result<Self> {
        let (shift, scale, lattice) = match &family {
            Family::Gaussian | Family::Uniform => (0.0, 1.0, false),
            Family::Rademacher => (0.0, 1.0, true),
            Family::ExponentialPower { alpha } => {
                if !(alpha.is_finite() && *alpha >= 1.0) {
                    return Err(LabError::InvalidSpec(format!(
                        "exponential_power exponent must be finite and >= 1, got {alpha}"
                    )));
                }
                (0.0, exp_power_scale(*alpha), false)
            }
            Family::Discrete { support } => {
                if support.is_empty() {
                    return Err(LabError::InvalidSpec("discrete support is empty".into()));
                }
                if support.iter().any(|&(v, p)| !(p > 0.0) || !v.is_finite()) {
                    return Err(LabError::InvalidSpec(
                        "discrete support needs finite values and positive probabilities".into(),
                    ));
                }
                let total: f64 = support.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(LabError::InvalidSpec(format!(
                        "discrete probabilities sum to {total}, expected 1"
                    )));
                }
                let mean: f64 = support.iter().map(|&(v, p)| v * p).sum();
                let var: f64 = support.iter().map(|&(v, p)| (v - mean).powi(2) * p).sum();
                if !(var > 1e-14) {
                    return Err(LabError::InvalidSpec("discrete support has zero variance".into()));
                }
                let integer = support.iter().all(|&(v, _)| v.fract() == 0.0 && v.abs() < 1e6);
                let centered = mean.abs() < 1e-12;
                let shift = if centered { 0.0 } else { mean };
                (shift, 1.0 / var.sqrt(), integer && centered)
            }
        };
        let mut spec = DisorderSpec {
            family,
            nu: None,
            shift,
            scale,
            lattice,
        };
        spec.nu = spec.certify_nu();
        Ok(spec)
    }

    pub fn gaussian() -> Self {
        Self::new(Family::Gaussian).expect("gaussian spec is valid")
    }

    pub fn rademacher() -> Self {
        Self::new(Family::Rademacher).expect("rademacher spec is valid")
    }

    pub fn uniform() -> Self {
        Self::new(Family::Uniform).expect("uniform spec is valid")
    }

    pub fn exponential_power(alpha: f64) -> Result<Self> {
        Self::new(Family::ExponentialPower { alpha })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn subgaussian(&self) -> bool {
        self.nu.is_some()
    }

    /// Whether samples are stored as exact integers times [`Self::lattice_scale`].
    pub fn is_lattice(&self) -> bool {
        self.lattice
    }

    pub fn lattice_scale(&self) -> f64 {
        self.scale
    }

    /// Variance proxy `nu` with `E exp(l X) <= exp(l^2 nu / 2)`.
    ///
    /// Exact for gaussian and Rademacher; for the other families this is the
    /// supremum of `2 ln E exp(l X) / l^2` over a fine `l` grid in `[-10, 10]`,
    /// floored at 1. That certificate is numerical and may not be tight.
    pub fn variance_proxy(&self) -> Result<f64> {
        self.nu
            .ok_or_else(|| LabError::InvalidSpec(format!("{self} is not subgaussian; no variance proxy")))
    }

    /// `ln E exp(lambda X)` for the standardized variable.
    pub fn log_mgf(&self, lambda: f64) -> f64 {
        match &self.family {
            Family::Gaussian => lambda * lambda / 2.0,
            Family::Rademacher => log_cosh(lambda),
            Family::Uniform => {
                let x = SQRT3 * lambda;
                if x.abs() < 1e-6 {
                    x * x / 6.0
                } else {
                    // ln(sinh(x)/x) = |x| + ln((1 - e^{-2|x|})/2) - ln|x|
                    let ax = x.abs();
                    ax + (-(-2.0 * ax).exp()).ln_1p() - std::f64::consts::LN_2 - ax.ln()
                }
            }
            Family::ExponentialPower { alpha } => exp_power_log_mgf(*alpha, self.scale, lambda),
            Family::Discrete { support } => {
                let terms: Vec<f64> = support
                    .iter()
                    .map(|&(v, p)| p.ln() + lambda * (v - self.shift) * self.scale)
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    fn certify_nu(&self) -> Option<f64> {
        match &self.family {
            Family::Gaussian | Family::Rademacher => Some(1.0),
            Family::ExponentialPower { alpha } if *alpha < 2.0 => None,
            _ => {
                let mut sup: f64 = 1.0;
                for i in 1..=400 {
                    let lambda = i as f64 * 0.025;
                    for l in [lambda, -lambda] {
                        sup = sup.max(2.0 * self.log_mgf(l) / (l * l));
                    }
                }
                // Round up past grid and quadrature error.
                Some(if sup <= 1.0 + 1e-9 { 1.0 } else { sup * (1.0 + 1e-6) })
            }
        }
    }

    /// One standardized draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.family {
            Family::Gaussian => rng.sample(StandardNormal),
            Family::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Family::Uniform => rng.random_range(-SQRT3..SQRT3),
            Family::ExponentialPower { alpha } => {
                let magnitude = exp_power_magnitude(*alpha, rng);
                let signed = if rng.random::<bool>() { magnitude } else { -magnitude };
                signed * self.scale
            }
            Family::Discrete { support } => (self.draw_raw(support, rng) - self.shift) * self.scale,
        }
    }

    fn draw_raw<R: Rng + ?Sized>(&self, support: &[(f64, f64)], rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(v, p) in support {
            acc += p;
            if u < acc {
                return v;
            }
        }
        support[support.len() - 1].0
    }

    fn sample_lattice<R: Rng + ?Sized>(&self, rng: &mut R) -> i32 {
        match &self.family {
            Family::Rademacher => {
                if rng.random::<bool>() {
                    1
                } else {
                    -1
                }
            }
            Family::Discrete { support } => self.draw_raw(support, rng) as i32,
            _ => unreachable!("lattice sampling on a continuous family"),
        }
    }

    /// `m x n` matrix of i.i.d. standardized entries. Row `r` is drawn from
    /// lane `r` of `stream`, so the first rows do not depend on `m`.
    pub fn sample_matrix(&self, m: usize, n: usize, stream: SeededStream) -> Result<DisorderMatrix> {
        if n == 0 {
            return Err(LabError::Shape("disorder matrix needs n >= 1 columns".into()));
        }
        let entries = if self.lattice {
            let mut ints = Vec::with_capacity(m * n);
            for r in 0..m {
                let mut rng = stream.rng(r as u64);
                ints.extend((0..n).map(|_| self.sample_lattice(&mut rng)));
            }
            Entries::Lattice {
                ints,
                scale: self.scale,
            }
        } else {
            let mut vals = Vec::with_capacity(m * n);
            for r in 0..m {
                let mut rng = stream.rng(r as u64);
                vals.extend((0..n).map(|_| self.sample(&mut rng)));
            }
            Entries::Real(vals)
        };
        Ok(DisorderMatrix {
            rows: m,
            cols: n,
            entries,
        })
    }

    /// A single row, identical to row `row` of [`Self::sample_matrix`].
    pub fn sample_row(&self, row: usize, n: usize, stream: SeededStream) -> Vec<f64> {
        let mut rng = stream.rng(row as u64);
        if self.lattice {
            (0..n)
                .map(|_| self.sample_lattice(&mut rng) as f64 * self.scale)
                .collect()
        } else {
            (0..n).map(|_| self.sample(&mut rng)).collect()
        }
    }
}

fn log_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Factor turning `exp(-|y|^alpha)` draws into unit-variance draws:
/// `Var Y = Gamma(3/alpha) / Gamma(1/alpha)`.
pub fn exp_power_scale(alpha: f64) -> f64 {
    (0.5 * (ln_gamma(1.0 / alpha) - ln_gamma(3.0 / alpha))).exp()
}

/// `|Y|` for `Y` with density proportional to `exp(-|y|^alpha)`; `|Y|^alpha` is `Gamma(1/alpha, 1)`.
fn exp_power_magnitude<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(1.0 / alpha, 1.0).expect("valid gamma parameters");
    let v: f64 = g.sample(rng);
    v.powf(1.0 / alpha)
}

/// `ln E exp(lambda * scale * Y)` by composite Simpson on a log scale.
fn exp_power_log_mgf(alpha: f64, scale: f64, lambda: f64) -> f64 {
    let c = lambda * scale;
    // The integrand exp(c y - |y|^alpha) peaks near (|c|/alpha)^(1/(alpha-1)).
    let peak = if alpha > 1.0 {
        (c.abs() / alpha).powf(1.0 / (alpha - 1.0))
    } else {
        0.0
    };
    let half_width = 2.0 * peak + 40f64.powf(1.0 / alpha) + 2.0;
    let steps = 4_000usize;
    let h = 2.0 * half_width / steps as f64;
    let log_f = |y: f64| c * y - y.abs().powf(alpha);
    let terms: Vec<f64> = (0..=steps)
        .map(|i| {
            let y = -half_width + i as f64 * h;
            let w: f64 = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w.ln() + log_f(y)
        })
        .collect();
    let log_integral = log_sum_exp(&terms) + (h / 3.0).ln();
    let log_norm = std::f64::consts::LN_2 + ln_gamma(1.0 + 1.0 / alpha);
    log_integral - log_norm
}

impl fmt::Display for DisorderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            Family::Gaussian => write!(f, "gaussian"),
            Family::Rademacher => write!(f, "rademacher"),
            Family::Uniform => write!(f, "uniform"),
            Family::ExponentialPower { alpha } => write!(f, "exponential_power:{alpha}"),
            Family::Discrete { support } => {
                write!(f, "discrete:")?;
                for (i, (v, p)) in support.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}@{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for DisorderSpec {
    type Err = LabError;

    /// `gaussian`, `rademacher`, `uniform`, `exponential_power:<alpha>`, or
    /// `discrete:<v>@<p>,<v>@<p>,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let bad = |msg: String| LabError::InvalidSpec(format!("{msg} in `{s}`"));
        let family = match (name, args) {
            ("gaussian", None) => Family::Gaussian,
            ("rademacher", None) => Family::Rademacher,
            ("uniform", None) => Family::Uniform,
            ("exponential_power", Some(a)) => Family::ExponentialPower {
                alpha: a.parse().map_err(|_| bad(format!("bad exponent `{a}`")))?,
            },
            ("discrete", Some(a)) => {
                let mut support = Vec::new();
                for item in a.split(',') {
                    let (v, p) = item
                        .split_once('@')
                        .ok_or_else(|| bad(format!("expected value@prob, got `{item}`")))?;
                    let v: f64 = v.trim().parse().map_err(|_| bad(format!("bad value `{v}`")))?;
                    let p: f64 = p.trim().parse().map_err(|_| bad(format!("bad probability `{p}`")))?;
                    support.push((v, p));
                }
                Family::Discrete { support }
            }
            _ => return Err(bad("unknown disorder family".into())),
        };
        DisorderSpec::new(family)
    }
}

impl Serialize for DisorderSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DisorderSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entries {
    Real(Vec<f64>),
    /// Entry value is `ints[i] as f64 * scale`.
    Lattice {
        ints: Vec<i32>,
        scale: f64,
    },
}

/// Row-major `rows x cols` disorder realization.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderMatrix {
    rows: usize,
    cols: usize,
    entries: Entries,
}

impl DisorderMatrix {
    pub fn from_real(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(LabError::Shape(format!(
                "expected {rows}x{cols} = {} entries, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(DisorderMatrix {
            rows,
            cols,
            entries: Entries::Real(values),
        })
    }

    pub fn from_lattice(rows: usize, cols: usize, ints: Vec<i32>, scale: f64) -> Result<Self> {
        if ints.len() != rows * cols {
            return Err(LabError::Shape(format!(
                "expected {rows}x{cols} = {} entries, got {}",
                rows * cols,
                ints.len()
            )));
        }
        Ok(DisorderMatrix {
            rows,
            cols,
            entries: Entries::Lattice { ints, scale },
        })
    }

    /// Rows of `values`; stored on the integer lattice when every entry is an integer.
    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LabError::Shape(format!("every row must have {cols} entries")));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.iter().all(|v| v.fract() == 0.0 && v.abs() < 1e6) {
            let ints = flat.iter().map(|&v| v as i32).collect();
            return Self::from_lattice(rows.len(), cols, ints, 1.0);
        }
        Self::from_real(rows.len(), cols, flat)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &Entries {
        &self.entries
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.entries, Entries::Lattice { .. })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let i = r * self.cols + c;
        match &self.entries {
            Entries::Real(v) => v[i],
            Entries::Lattice { ints, scale } => ints[i] as f64 * scale,
        }
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        (0..self.cols).map(|c| self.get(r, c)).collect()
    }

    /// First `m` rows.
    pub fn truncated(&self, m: usize) -> DisorderMatrix {
        let m = m.min(self.rows);
        let len = m * self.cols;
        let entries = match &self.entries {
            Entries::Real(v) => Entries::Real(v[..len].to_vec()),
            Entries::Lattice { ints, scale } => Entries::Lattice {
                ints: ints[..len].to_vec(),
                scale: *scale,
            },
        };
        DisorderMatrix {
            rows: m,
            cols: self.cols,
            entries,
        }
    }

    /// Appends a row, staying on the lattice when the row is representable there.
    pub fn with_row(&self, row: &[f64]) -> Result<DisorderMatrix> {
        if row.len() != self.cols {
            return Err(LabError::Shape(format!(
                "new row has {} entries, matrix has {} columns",
                row.len(),
                self.cols
            )));
        }
        let entries = match &self.entries {
            Entries::Lattice { ints, scale } => {
                let lifted: Option<Vec<i32>> = row
                    .iter()
                    .map(|&v| {
                        let k = (v / scale).round();
                        (k * scale == v && k.abs() < 1e6).then_some(k as i32)
                    })
                    .collect();
                match lifted {
                    Some(extra) => {
                        let mut ints = ints.clone();
                        ints.extend(extra);
                        Entries::Lattice { ints, scale: *scale }
                    }
                    None => {
                        let mut vals: Vec<f64> = ints.iter().map(|&k| k as f64 * scale).collect();
                        vals.extend_from_slice(row);
                        Entries::Real(vals)
                    }
                }
            }
            Entries::Real(v) => {
                let mut vals = v.clone();
                vals.extend_from_slice(row);
                Entries::Real(vals)
            }
        };
        Ok(DisorderMatrix {
            rows: self.rows + 1,
            cols: self.cols,
            entries,
        })
    }

    /// Every entry negated.
    pub fn negated(&self) -> DisorderMatrix {
        let entries = match &self.entries {
            Entries::Real(v) => Entries::Real(v.iter().map(|x| -x).collect()),
            Entries::Lattice { ints, scale } => Entries::Lattice {
                ints: ints.iter().map(|x| -x).collect(),
                scale: *scale,
            },
        };
        DisorderMatrix {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }
}
