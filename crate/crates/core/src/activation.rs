//! `{0,1}`-valued activation functions and their soft truncations.
//!
//! All intervals are closed and the half-space is `{x >= kappa}`. With
//! lattice disorder the constraint value has atoms, so the boundary
//! convention is observable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erfc;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// `U(x) = 1{x >= kappa}`
    HalfSpace { kappa: f64 },
    /// `U(x) = 1{a <= x <= b}`
    Interval { a: f64, b: f64 },
    /// `U(x) = 1{|x| <= kappa}`
    SymmetricInterval { kappa: f64 },
    /// Sorted, pairwise disjoint closed intervals. Empty means `U == 0`.
    Union(Vec<(f64, f64)>),
}

impl Activation {
    pub fn half_space(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(LabError::InvalidActivation(format!(
                "kappa must be finite, got {kappa}"
            )));
        }
        Ok(Activation::HalfSpace { kappa })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(LabError::InvalidActivation(format!(
                "interval needs finite a < b, got [{a}, {b}]"
            )));
        }
        Ok(Activation::Interval { a, b })
    }

    pub fn symmetric_interval(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(LabError::InvalidActivation(format!(
                "symmetric interval needs finite kappa > 0, got {kappa}"
            )));
        }
        Ok(Activation::SymmetricInterval { kappa })
    }

    pub fn union(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(LabError::InvalidActivation(format!(
                    "union member needs finite a < b, got [{a}, {b}]"
                )));
            }
        }
        for pair in intervals.windows(2) {
            if pair[0].1 >= pair[1].0 {
                return Err(LabError::InvalidActivation(format!(
                    "union intervals must be sorted and disjoint: [{}, {}] then [{}, {}]",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(Activation::Union(intervals))
    }

    /// The everywhere-zero activation.
    pub fn zero() -> Self {
        Activation::Union(Vec::new())
    }

    /// Closed intervals whose union is `{U = 1}`; a half-space has `+inf` as upper end.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        match self {
            Activation::HalfSpace { kappa } => vec![(*kappa, f64::INFINITY)],
            Activation::Interval { a, b } => vec![(*a, *b)],
            Activation::SymmetricInterval { kappa } => vec![(-kappa, *kappa)],
            Activation::Union(v) => v.clone(),
        }
    }

    pub fn eval(&self, x: f64) -> bool {
        match self {
            Activation::HalfSpace { kappa } => x >= *kappa,
            Activation::Interval { a, b } => *a <= x && x <= *b,
            Activation::SymmetricInterval { kappa } => -kappa <= x && x <= *kappa,
            Activation::Union(v) => v.iter().any(|&(a, b)| a <= x && x <= b),
        }
    }

    /// Whether `U(-x) = U(x)` for all `x`.
    pub fn is_symmetric(&self) -> bool {
        let iv = self.intervals();
        let mirrored: Vec<(f64, f64)> = iv.iter().rev().map(|&(a, b)| (-b, -a)).collect();
        iv == mirrored
    }

    /// Widest closed interval on which `U == 1`. A half-space reports
    /// `[kappa, kappa + 1]`: any finite witness serves.
    pub fn contains_interval(&self) -> Option<(f64, f64)> {
        match self {
            Activation::HalfSpace { kappa } => Some((*kappa, kappa + 1.0)),
            _ => self
                .intervals()
                .into_iter()
                .fold(None, |best: Option<(f64, f64)>, iv| match best {
                    Some(b) if b.1 - b.0 >= iv.1 - iv.0 => Some(b),
                    _ => Some(iv),
                }),
        }
    }

    /// `p = E U(g)` for standard gaussian `g`, with `c = -ln p`.
    pub fn gaussian_mass(&self) -> GaussianMass {
        let p: f64 = self
            .intervals()
            .iter()
            .map(|&(a, b)| gaussian_interval_mass(a, b))
            .sum::<f64>()
            .clamp(0.0, 1.0);
        GaussianMass {
            p,
            c: (p < 1.0).then(|| -p.ln()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMass {
    pub p: f64,
    /// `-ln p`; absent when `p == 1`.
    pub c: Option<f64>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(a <= g <= b)`, computed on whichever tail keeps precision.
fn gaussian_interval_mass(a: f64, b: f64) -> f64 {
    if b == f64::INFINITY {
        return normal_cdf(-a);
    }
    if a >= 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_cdf(-b)
    }
}

/// `u_A(x) = max(ln U(x), -A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftActivation {
    pub base: Activation,
    pub a_trunc: f64,
}

impl SoftActivation {
    pub fn new(base: Activation, a_trunc: f64) -> Result<Self> {
        if !(a_trunc > 0.0) {
            return Err(LabError::InvalidActivation(format!(
                "soft truncation level must be positive, got {a_trunc}"
            )));
        }
        Ok(SoftActivation { base, a_trunc })
    }

    pub fn soft_log(&self, x: f64) -> f64 {
        if self.base.eval(x) {
            0.0
        } else {
            -self.a_trunc
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::HalfSpace { kappa } => write!(f, "half_space:{kappa}"),
            Activation::Interval { a, b } => write!(f, "interval:{a},{b}"),
            Activation::SymmetricInterval { kappa } => write!(f, "symmetric_interval:{kappa}"),
            Activation::Union(v) if v.is_empty() => write!(f, "zero"),
            Activation::Union(v) => {
                write!(f, "union:")?;
                for (i, (a, b)) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{a},{b}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Activation {
    type Err = LabError;

    /// `half_space:<kappa>`, `interval:<a>,<b>`, `symmetric_interval:<kappa>`,
    /// `union:<a>,<b>;<a>,<b>...`, or `zero`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: &str| LabError::InvalidActivation(format!("{msg} in `{s}`"));
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("bad number `{}`", t.trim())))
        };
        let pair = |t: &str| -> Result<(f64, f64)> {
            let (a, b) = t.split_once(',').ok_or_else(|| bad("expected `a,b`"))?;
            Ok((num(a)?, num(b)?))
        };
        if s == "zero" {
            return Ok(Activation::zero());
        }
        let (name, args) = s.split_once(':').ok_or_else(|| bad("missing parameters"))?;
        match name.trim() {
            "half_space" => Activation::half_space(num(args)?),
            "interval" => {
                let (a, b) = pair(args)?;
                Activation::interval(a, b)
            }
            "symmetric_interval" => Activation::symmetric_interval(num(args)?),
            "union" => {
                let items = args
                    .split(';')
                    .filter(|t| !t.trim().is_empty())
                    .map(pair)
                    .collect::<Result<Vec<_>>>()?;
                Activation::union(items)
            }
            _ => Err(bad("unknown activation kind")),
        }
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
