//! Exact partition functions over `{-1,+1}^N`.
//!
//! Configurations are enumerated in reflected Gray-code order, so moving to
//! the next configuration flips one spin and every constraint value is
//! updated by `+-2 xi_i`. The cube is cut into `2^segment_bits` contiguous
//! Gray segments, each initialized from scratch; segments are reduced in
//! order, so totals never depend on the thread count.
//!
//! Lattice disorder is handled with exact `i32` sums and a precomputed
//! acceptance table; real disorder uses `f64` sums with the acceptance
//! intervals rescaled to dot-product units and a full recomputation every
//! `2^20` flips.

use std::ops::{AddAssign, SubAssign};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{Activation, SoftActivation};
use crate::disorder::{DisorderMatrix, DisorderSpec, Entries};
use crate::error::{LabError, Result};
use crate::formulas::truncated_log;
use crate::stream::SeededStream;

/// Spin configuration packed into a word: bit `i` set means `sigma_i = +1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Config(pub u64);

impl Config {
    pub fn spin(self, i: usize) -> i32 {
        if self.0 >> i & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn from_spins(spins: &[i8]) -> Config {
        assert!(spins.len() <= 64, "configurations are limited to 64 spins");
        Config(
            spins
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0)
                .fold(0u64, |acc, (i, _)| acc | 1 << i),
        )
    }

    pub fn to_spins(self, n: usize) -> Vec<i8> {
        (0..n).map(|i| self.spin(i) as i8).collect()
    }

    pub fn negated(self, n: usize) -> Config {
        Config(!self.0 & full_mask(n))
    }

    /// `(sigma, tau)` over the first `n` coordinates.
    pub fn dot(self, other: Config, n: usize) -> i64 {
        n as i64 - 2 * ((self.0 ^ other.0) & full_mask(n)).count_ones() as i64
    }
}

pub fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// One disorder realization together with the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    n: usize,
    m: usize,
    activation: Activation,
    xi: DisorderMatrix,
    spec: Option<DisorderSpec>,
}

impl Instance {
    pub fn new(activation: Activation, xi: DisorderMatrix) -> Result<Self> {
        if xi.cols() == 0 {
            return Err(LabError::Shape("instance needs n >= 1".into()));
        }
        Ok(Instance {
            n: xi.cols(),
            m: xi.rows(),
            activation,
            xi,
            spec: None,
        })
    }

    /// Instance with `m` constraints drawn from `spec` along `stream`.
    pub fn sample(
        spec: &DisorderSpec,
        activation: Activation,
        n: usize,
        m: usize,
        stream: SeededStream,
    ) -> Result<Self> {
        let xi = spec.sample_matrix(m, n, stream)?;
        let mut inst = Instance::new(activation, xi)?;
        inst.spec = Some(spec.clone());
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn xi(&self) -> &DisorderMatrix {
        &self.xi
    }

    pub fn spec(&self) -> Option<&DisorderSpec> {
        self.spec.as_ref()
    }

    /// Same model restricted to the first `m` constraints.
    pub fn truncated(&self, m: usize) -> Instance {
        let xi = self.xi.truncated(m);
        Instance {
            m: xi.rows(),
            xi,
            ..self.clone()
        }
    }

    /// Same model with one more constraint row.
    pub fn with_row(&self, row: &[f64]) -> Result<Instance> {
        let xi = self.xi.with_row(row)?;
        Ok(Instance {
            m: xi.rows(),
            xi,
            ..self.clone()
        })
    }

    pub fn with_activation(&self, activation: Activation) -> Instance {
        Instance {
            activation,
            ..self.clone()
        }
    }

    /// Every constraint row negated.
    pub fn negated(&self) -> Instance {
        Instance {
            xi: self.xi.negated(),
            ..self.clone()
        }
    }

    /// Normalized constraint values `(xi^k, sigma)/sqrt(N)`.
    pub fn constraint_values(&self, sigma: Config) -> Vec<f64> {
        let sqrt_n = (self.n as f64).sqrt();
        (0..self.m)
            .map(|k| {
                (0..self.n)
                    .map(|i| self.xi.get(k, i) * sigma.spin(i) as f64)
                    .sum::<f64>()
                    / sqrt_n
            })
            .collect()
    }

    /// Whether `sigma` satisfies every constraint, evaluated directly.
    pub fn satisfies(&self, sigma: Config) -> bool {
        match compile(self) {
            Kernel::Real(c) => c.violations_direct(sigma.0) == 0,
            Kernel::Lattice(c) => c.violations_direct(sigma.0) == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionResult {
    /// Number of configurations satisfying every constraint.
    pub z: u64,
    /// `ln z`, or `-inf` when `z == 0`.
    pub log_z: f64,
    /// `max(ln z, n delta)`
    pub log_trunc: f64,
    pub delta: f64,
}

impl PartitionResult {
    pub fn from_count(z: u64, n: usize, delta: f64) -> Self {
        let log_z = if z == 0 { f64::NEG_INFINITY } else { (z as f64).ln() };
        PartitionResult {
            z,
            log_z,
            log_trunc: truncated_log(log_z, n, delta),
            delta,
        }
    }
}

/// Uniform draws from the solution set.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSample {
    pub n: usize,
    pub configurations: Vec<Config>,
}

/// Counts before and after appending one constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddOne {
    pub z_before: u64,
    pub z_after: u64,
}

impl AddOne {
    pub fn ratio(&self) -> f64 {
        self.z_after as f64 / self.z_before as f64
    }
}

/// A constraint factor `Theta(x)` in log form.
pub trait ConstraintFactor: Sync {
    /// `ln Theta(x)`; `-inf` for a hard zero.
    fn log_weight(&self, x: f64) -> f64;
}

impl ConstraintFactor for Activation {
    fn log_weight(&self, x: f64) -> f64 {
        if self.eval(x) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl ConstraintFactor for SoftActivation {
    fn log_weight(&self, x: f64) -> f64 {
        self.soft_log(x)
    }
}

const REBASE_BITS: u32 = 20;
const STOP_POLL: u64 = (1 << 12) - 1;

trait Lane: Copy + Default + Send + Sync + AddAssign + SubAssign + PartialEq + std::fmt::Debug {
    const DRIFTS: bool;
}

impl Lane for f64 {
    const DRIFTS: bool = true;
}

impl Lane for i32 {
    const DRIFTS: bool = false;
}

trait Accept<T>: Send + Sync {
    fn ok(&self, d: T) -> bool;
    fn value(&self, d: T) -> f64;
}

/// Acceptance in dot-product units: `d in [a sqrt N, b sqrt N]`.
struct RealAccept {
    /// First interval, checked inline; empty activations use an inverted one.
    lo: f64,
    hi: f64,
    rest: Vec<(f64, f64)>,
    inv_sqrt_n: f64,
}

impl Accept<f64> for RealAccept {
    #[inline(always)]
    fn ok(&self, d: f64) -> bool {
        (self.lo <= d && d <= self.hi)
            || (!self.rest.is_empty() && self.rest.iter().any(|&(lo, hi)| lo <= d && d <= hi))
    }

    fn value(&self, d: f64) -> f64 {
        d * self.inv_sqrt_n
    }
}

/// Table indexed by the exact integer sum.
struct LatticeAccept {
    table: Vec<bool>,
    offset: i32,
    unit: f64,
}

impl Accept<i32> for LatticeAccept {
    #[inline(always)]
    fn ok(&self, d: i32) -> bool {
        self.table[(d + self.offset) as usize]
    }

    fn value(&self, d: i32) -> f64 {
        d as f64 * self.unit
    }
}

struct Compiled<T: Lane, A: Accept<T>> {
    n: usize,
    m: usize,
    /// Row-major entries.
    rows: Vec<T>,
    /// Column-major doubled entries: `cols2[i * m + k] = 2 xi_ki`.
    cols2: Vec<T>,
    accept: A,
}

enum Kernel {
    Real(Compiled<f64, RealAccept>),
    Lattice(Compiled<i32, LatticeAccept>),
}

fn compile(inst: &Instance) -> Kernel {
    let (n, m) = (inst.n, inst.m);
    let sqrt_n = (n as f64).sqrt();
    match inst.xi.entries() {
        Entries::Real(vals) => {
            let mut cols2 = vec![0.0; n * m];
            for k in 0..m {
                for i in 0..n {
                    cols2[i * m + k] = 2.0 * vals[k * n + i];
                }
            }
            let mut intervals: Vec<(f64, f64)> = inst
                .activation
                .intervals()
                .into_iter()
                .map(|(a, b)| (a * sqrt_n, b * sqrt_n))
                .collect();
            let (lo, hi) = if intervals.is_empty() {
                (f64::INFINITY, f64::NEG_INFINITY)
            } else {
                intervals.remove(0)
            };
            Kernel::Real(Compiled {
                n,
                m,
                rows: vals.clone(),
                cols2,
                accept: RealAccept {
                    lo,
                    hi,
                    rest: intervals,
                    inv_sqrt_n: 1.0 / sqrt_n,
                },
            })
        }
        Entries::Lattice { ints, scale } => {
            let mut cols2 = vec![0i32; n * m];
            for k in 0..m {
                for i in 0..n {
                    cols2[i * m + k] = 2 * ints[k * n + i];
                }
            }
            let max_abs = ints.iter().map(|v| v.abs()).max().unwrap_or(0);
            let offset = max_abs * n as i32;
            let unit = scale / sqrt_n;
            let table = (-offset..=offset)
                .map(|d| inst.activation.eval(d as f64 * scale / sqrt_n))
                .collect();
            Kernel::Lattice(Compiled {
                n,
                m,
                rows: ints.clone(),
                cols2,
                accept: LatticeAccept { table, offset, unit },
            })
        }
    }
}

impl<T: Lane, A: Accept<T>> Compiled<T, A> {
    fn init(&self, bits: u64, dots: &mut [T]) {
        for (k, d) in dots.iter_mut().enumerate() {
            let mut acc = T::default();
            for (i, &x) in self.rows[k * self.n..(k + 1) * self.n].iter().enumerate() {
                if bits >> i & 1 == 1 {
                    acc += x;
                } else {
                    acc -= x;
                }
            }
            *d = acc;
        }
    }

    /// Direct per-configuration evaluation, independent of any traversal state.
    fn violations_direct(&self, bits: u64) -> usize {
        let mut dots = vec![T::default(); self.m];
        self.init(bits, &mut dots);
        dots.iter().filter(|&&d| !self.accept.ok(d)).count()
    }

    #[inline(always)]
    fn all_ok(&self, dots: &[T]) -> bool {
        dots.iter().all(|&d| self.accept.ok(d))
    }

    #[inline(always)]
    fn violations(&self, dots: &[T]) -> usize {
        dots.iter().map(|&d| !self.accept.ok(d) as usize).sum()
    }

    #[inline(always)]
    fn first_violation(&self, dots: &[T]) -> usize {
        dots.iter().position(|&d| !self.accept.ok(d)).unwrap_or(self.m)
    }

    /// Visits Gray indices `start..end`. Returns `false` if `visit` stopped early.
    fn walk<F: FnMut(u64, &[T]) -> bool>(&self, start: u64, end: u64, mut visit: F) -> bool {
        let m = self.m;
        let mut bits = start ^ (start >> 1);
        let mut dots = vec![T::default(); m];
        self.init(bits, &mut dots);
        if !visit(bits, &dots) {
            return false;
        }
        for i in start + 1..end {
            let j = i.trailing_zeros() as usize;
            bits ^= 1 << j;
            if T::DRIFTS && i & ((1 << REBASE_BITS) - 1) == 0 {
                self.init(bits, &mut dots);
            } else {
                let col = &self.cols2[j * m..(j + 1) * m];
                if bits >> j & 1 == 1 {
                    for (d, &x) in dots.iter_mut().zip(col) {
                        *d += x;
                    }
                } else {
                    for (d, &x) in dots.iter_mut().zip(col) {
                        *d -= x;
                    }
                }
            }
            if !visit(bits, &dots) {
                return false;
            }
        }
        true
    }

    /// Final dot products after walking a whole segment, for drift checks.
    fn walk_final(&self, start: u64, end: u64) -> (u64, Vec<T>) {
        let mut last = (0, Vec::new());
        self.walk(start, end, |bits, dots| {
            last = (bits, dots.to_vec());
            true
        });
        last
    }
}

/// Exhaustive enumeration settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enumerator {
    /// Largest `n` accepted.
    pub cap: usize,
    /// The cube is split into `2^segment_bits` Gray segments.
    pub segment_bits: u32,
}

impl Default for Enumerator {
    fn default() -> Self {
        Enumerator {
            cap: 30,
            segment_bits: 6,
        }
    }
}

/// Oracle cap for [`count_naive`].
pub const NAIVE_CAP: usize = 16;

impl Enumerator {
    pub fn with_cap(cap: usize) -> Self {
        Enumerator {
            cap,
            ..Default::default()
        }
    }

    fn check(&self, inst: &Instance) -> Result<()> {
        if inst.n > self.cap || inst.n > 62 {
            return Err(LabError::CapExceeded {
                n: inst.n,
                cap: self.cap.min(62),
            });
        }
        Ok(())
    }

    fn segments(&self, n: usize) -> Vec<(u64, u64)> {
        let bits = (self.segment_bits as usize).min(n);
        let count = 1u64 << bits;
        let len = 1u64 << (n - bits);
        (0..count).map(|s| (s * len, (s + 1) * len)).collect()
    }

    fn reduce_segments<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(u64, u64) -> R + Sync + Send,
    {
        self.segments(n).into_par_iter().map(|(s, e)| f(s, e)).collect()
    }

    /// Exact `Z = sum_sigma prod_k U((xi^k, sigma)/sqrt N)`.
    pub fn count_exact(&self, inst: &Instance, delta: f64) -> Result<PartitionResult> {
        self.check(inst)?;
        let z = match compile(inst) {
            Kernel::Real(c) => self.count_impl(&c),
            Kernel::Lattice(c) => self.count_impl(&c),
        };
        Ok(PartitionResult::from_count(z, inst.n, delta))
    }

    fn count_impl<T: Lane, A: Accept<T>>(&self, c: &Compiled<T, A>) -> u64 {
        self.reduce_segments(c.n, |s, e| {
            let mut z = 0u64;
            c.walk(s, e, |_, dots| {
                z += c.all_ok(dots) as u64;
                true
            });
            z
        })
        .into_iter()
        .sum()
    }

    /// Whether any configuration satisfies every constraint.
    pub fn exists_solution(&self, inst: &Instance) -> Result<bool> {
        self.check(inst)?;
        Ok(match compile(inst) {
            Kernel::Real(c) => self.exists_impl(&c),
            Kernel::Lattice(c) => self.exists_impl(&c),
        })
    }

    fn exists_impl<T: Lane, A: Accept<T>>(&self, c: &Compiled<T, A>) -> bool {
        let found = AtomicBool::new(false);
        self.segments(c.n).into_par_iter().for_each(|(s, e)| {
            if found.load(Ordering::Relaxed) {
                return;
            }
            let mut steps = 0u64;
            c.walk(s, e, |_, dots| {
                if c.all_ok(dots) {
                    found.store(true, Ordering::Relaxed);
                    return false;
                }
                steps += 1;
                !(steps & STOP_POLL == 0 && found.load(Ordering::Relaxed))
            });
        });
        found.into_inner()
    }

    /// `h[v]` = number of configurations violating exactly `v` constraints.
    pub fn violation_histogram(&self, inst: &Instance) -> Result<Vec<u64>> {
        self.check(inst)?;
        Ok(match compile(inst) {
            Kernel::Real(c) => self.histogram_impl(&c, |c, d| c.violations(d)),
            Kernel::Lattice(c) => self.histogram_impl(&c, |c, d| c.violations(d)),
        })
    }

    /// `h[k]` = number of configurations whose first violated constraint is
    /// `k` (`h[m]`: none violated). `Z` of the first `j` rows is `sum_{k >= j} h[k]`.
    pub fn first_violation_histogram(&self, inst: &Instance) -> Result<Vec<u64>> {
        self.check(inst)?;
        Ok(match compile(inst) {
            Kernel::Real(c) => self.histogram_impl(&c, |c, d| c.first_violation(d)),
            Kernel::Lattice(c) => self.histogram_impl(&c, |c, d| c.first_violation(d)),
        })
    }

    fn histogram_impl<T, A, F>(&self, c: &Compiled<T, A>, bucket: F) -> Vec<u64>
    where
        T: Lane,
        A: Accept<T>,
        F: Fn(&Compiled<T, A>, &[T]) -> usize + Sync + Send,
    {
        let parts = self.reduce_segments(c.n, |s, e| {
            let mut h = vec![0u64; c.m + 1];
            c.walk(s, e, |_, dots| {
                h[bucket(c, dots)] += 1;
                true
            });
            h
        });
        let mut total = vec![0u64; c.m + 1];
        for h in parts {
            for (t, v) in total.iter_mut().zip(h) {
                *t += v;
            }
        }
        total
    }

    /// `Z` for each prefix length in `prefixes` (each at most `m`), in one traversal.
    pub fn prefix_counts(&self, inst: &Instance, prefixes: &[usize]) -> Result<Vec<u64>> {
        if let Some(&bad) = prefixes.iter().find(|&&j| j > inst.m) {
            return Err(LabError::Shape(format!("prefix {bad} exceeds m = {}", inst.m)));
        }
        let h = self.first_violation_histogram(inst)?;
        Ok(prefix_counts_from_histogram(&h, prefixes))
    }

    /// `ln sum_sigma exp(-A * violations(sigma))`.
    pub fn free_energy_soft(&self, inst: &Instance, a_trunc: f64) -> Result<f64> {
        if !(a_trunc > 0.0) {
            return Err(LabError::Domain(format!(
                "truncation level must be positive, got {a_trunc}"
            )));
        }
        let h = self.violation_histogram(inst)?;
        Ok(soft_log_partition(&h, a_trunc))
    }

    /// `ln sum_sigma prod_k Theta((xi^k, sigma)/sqrt N)` for an arbitrary factor.
    pub fn log_partition_with<F: ConstraintFactor>(&self, inst: &Instance, factor: &F) -> Result<f64> {
        self.check(inst)?;
        let parts = match compile(inst) {
            Kernel::Real(c) => self.log_partition_impl(&c, factor),
            Kernel::Lattice(c) => self.log_partition_impl(&c, factor),
        };
        let mut acc = LogSumExp::default();
        for p in parts {
            acc.merge(p);
        }
        Ok(acc.value())
    }

    fn log_partition_impl<T: Lane, A: Accept<T>, F: ConstraintFactor>(
        &self,
        c: &Compiled<T, A>,
        factor: &F,
    ) -> Vec<LogSumExp> {
        self.reduce_segments(c.n, |s, e| {
            let mut acc = LogSumExp::default();
            c.walk(s, e, |_, dots| {
                let w: f64 = dots.iter().map(|&d| factor.log_weight(c.accept.value(d))).sum();
                acc.push(w);
                true
            });
            acc
        })
    }

    /// `Z_{M+1}` and `Z_M` when `new_row` is appended as constraint `M+1`.
    pub fn add_one_counts(&self, inst: &Instance, new_row: &[f64]) -> Result<AddOne> {
        let extended = inst.with_row(new_row)?;
        let h = self.first_violation_histogram(&extended)?;
        let m = inst.m;
        let add = AddOne {
            z_before: h[m] + h[m + 1],
            z_after: h[m + 1],
        };
        if add.z_before == 0 {
            return Err(LabError::EmptySolutionSet(
                "add-one ratio is undefined when Z_M = 0".into(),
            ));
        }
        Ok(add)
    }

    /// `Z_{M+1} / Z_M`.
    pub fn add_one_ratio(&self, inst: &Instance, new_row: &[f64]) -> Result<f64> {
        Ok(self.add_one_counts(inst, new_row)?.ratio())
    }

    /// Every solution, in Gray order.
    pub fn solutions(&self, inst: &Instance) -> Result<Vec<Config>> {
        self.check(inst)?;
        let parts: Vec<Vec<Config>> = match compile(inst) {
            Kernel::Real(c) => self.collect_impl(&c),
            Kernel::Lattice(c) => self.collect_impl(&c),
        };
        Ok(parts.into_iter().flatten().collect())
    }

    fn collect_impl<T: Lane, A: Accept<T>>(&self, c: &Compiled<T, A>) -> Vec<Vec<Config>> {
        self.reduce_segments(c.n, |s, e| {
            let mut out = Vec::new();
            c.walk(s, e, |bits, dots| {
                if c.all_ok(dots) {
                    out.push(Config(bits));
                }
                true
            });
            out
        })
    }

    /// `count` i.i.d. uniform draws from the solution set.
    pub fn solution_sample(&self, inst: &Instance, count: usize, stream: SeededStream) -> Result<SolutionSample> {
        self.check(inst)?;
        let kernel = compile(inst);
        let per_segment: Vec<u64> = match &kernel {
            Kernel::Real(c) => self.segment_counts(c),
            Kernel::Lattice(c) => self.segment_counts(c),
        };
        let z: u64 = per_segment.iter().sum();
        if z == 0 {
            return Err(LabError::EmptySolutionSet(
                "cannot sample from an empty solution set".into(),
            ));
        }
        let mut rng = stream.rng(0);
        let ranks: Vec<u64> = (0..count).map(|_| rng.random_range(0..z)).collect();
        let picked = match &kernel {
            Kernel::Real(c) => self.pick_ranks(c, &per_segment, &ranks),
            Kernel::Lattice(c) => self.pick_ranks(c, &per_segment, &ranks),
        };
        Ok(SolutionSample {
            n: inst.n,
            configurations: picked,
        })
    }

    fn segment_counts<T: Lane, A: Accept<T>>(&self, c: &Compiled<T, A>) -> Vec<u64> {
        self.reduce_segments(c.n, |s, e| {
            let mut z = 0u64;
            c.walk(s, e, |_, dots| {
                z += c.all_ok(dots) as u64;
                true
            });
            z
        })
    }

    fn pick_ranks<T: Lane, A: Accept<T>>(&self, c: &Compiled<T, A>, per_segment: &[u64], ranks: &[u64]) -> Vec<Config> {
        let segments = self.segments(c.n);
        let mut starts = Vec::with_capacity(per_segment.len());
        let mut acc = 0u64;
        for &z in per_segment {
            starts.push(acc);
            acc += z;
        }
        let mut sorted: Vec<(u64, usize)> = ranks.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        sorted.sort_unstable();
        let mut out = vec![Config(0); ranks.len()];
        let mut cursor = 0usize;
        for (seg, &(s, e)) in segments.iter().enumerate() {
            let hi = starts[seg] + per_segment[seg];
            let first = cursor;
            while cursor < sorted.len() && sorted[cursor].0 < hi {
                cursor += 1;
            }
            if first == cursor {
                continue;
            }
            let wanted = &sorted[first..cursor];
            let mut rank = starts[seg];
            let mut w = 0usize;
            c.walk(s, e, |bits, dots| {
                if c.all_ok(dots) {
                    while w < wanted.len() && wanted[w].0 == rank {
                        out[wanted[w].1] = Config(bits);
                        w += 1;
                    }
                    rank += 1;
                }
                w < wanted.len()
            });
        }
        out
    }

    /// Walks the whole cube and returns the final configuration and constraint
    /// values (normalized), alongside a direct recomputation at the same point.
    pub fn traversal_drift(&self, inst: &Instance) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(inst)?;
        let end = 1u64 << inst.n;
        let (walked, direct) = match compile(inst) {
            Kernel::Real(c) => {
                let (bits, dots) = c.walk_final(0, end);
                let mut fresh = vec![0.0; c.m];
                c.init(bits, &mut fresh);
                (
                    dots.iter().map(|&d| c.accept.value(d)).collect(),
                    fresh.iter().map(|&d| c.accept.value(d)).collect(),
                )
            }
            Kernel::Lattice(c) => {
                let (bits, dots) = c.walk_final(0, end);
                let mut fresh = vec![0; c.m];
                c.init(bits, &mut fresh);
                (
                    dots.iter().map(|&d| c.accept.value(d)).collect(),
                    fresh.iter().map(|&d| c.accept.value(d)).collect(),
                )
            }
        };
        Ok((walked, direct))
    }
}

/// `Z` of each prefix from a first-violation histogram.
pub fn prefix_counts_from_histogram(h: &[u64], prefixes: &[usize]) -> Vec<u64> {
    let mut tail = vec![0u64; h.len() + 1];
    for k in (0..h.len()).rev() {
        tail[k] = tail[k + 1] + h[k];
    }
    prefixes.iter().map(|&j| tail[j.min(h.len())]).collect()
}

/// `ln sum_v h[v] exp(-A v)`, written as a lead term plus `ln_1p` of the
/// remainder so the value is exactly nonincreasing in `A`.
pub fn soft_log_partition(h: &[u64], a_trunc: f64) -> f64 {
    let Some(v0) = h.iter().position(|&c| c > 0) else {
        return f64::NEG_INFINITY;
    };
    let lead = h[v0] as f64;
    let rest: f64 = h[v0 + 1..]
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(off, &c)| (c as f64 / lead) * (-a_trunc * (off + 1) as f64).exp())
        .sum();
    (lead.ln() - a_trunc * v0 as f64) + rest.ln_1p()
}

#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn merge(&mut self, other: LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        } else {
            self.sum += other.sum * (other.max - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Exact `Z` by recomputing every constraint value for every configuration.
/// Test oracle for [`Enumerator::count_exact`]; limited to `n <= 16`.
pub fn count_naive(inst: &Instance, delta: f64) -> Result<PartitionResult> {
    if inst.n > NAIVE_CAP {
        return Err(LabError::CapExceeded {
            n: inst.n,
            cap: NAIVE_CAP,
        });
    }
    let z = match compile(inst) {
        Kernel::Real(c) => (0..1u64 << inst.n).filter(|&b| c.violations_direct(b) == 0).count(),
        Kernel::Lattice(c) => (0..1u64 << inst.n).filter(|&b| c.violations_direct(b) == 0).count(),
    };
    Ok(PartitionResult::from_count(z as u64, inst.n, delta))
}

/// Convenience wrappers using [`Enumerator::default`].
pub fn count_exact(inst: &Instance, delta: f64) -> Result<PartitionResult> {
    Enumerator::default().count_exact(inst, delta)
}

pub fn exists_solution(inst: &Instance) -> Result<bool> {
    Enumerator::default().exists_solution(inst)
}

pub fn free_energy_soft(inst: &Instance, a_trunc: f64) -> Result<f64> {
    Enumerator::default().free_energy_soft(inst, a_trunc)
}

pub fn add_one_ratio(inst: &Instance, new_row: &[f64]) -> Result<f64> {
    Enumerator::default().add_one_ratio(inst, new_row)
}

pub fn solution_sample(inst: &Instance, count: usize, stream: SeededStream) -> Result<SolutionSample> {
    Enumerator::default().solution_sample(inst, count, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs0() -> Activation {
        Activation::half_space(0.0).unwrap()
    }

    fn two_spin() -> Instance {
        let xi = DisorderMatrix::from_rows(2, &[vec![1.0, -1.0]]).unwrap();
        Instance::new(hs0(), xi).unwrap()
    }

    #[test]
    fn empty_product_counts_whole_cube() {
        let xi = DisorderMatrix::from_real(0, 5, vec![]).unwrap();
        let inst = Instance::new(hs0(), xi).unwrap();
        let r = count_exact(&inst, 0.1).unwrap();
        assert_eq!(r.z, 32);
        assert_eq!(count_naive(&inst, 0.1).unwrap().z, 32);
        assert!(exists_solution(&inst).unwrap());
    }

    #[test]
    fn two_spin_half_space() {
        let inst = two_spin();
        assert_eq!(count_exact(&inst, 0.1).unwrap().z, 3);
        assert_eq!(count_naive(&inst, 0.1).unwrap().z, 3);
        // Same instance with real storage takes the float path.
        let real = Instance::new(hs0(), DisorderMatrix::from_real(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        assert_eq!(count_exact(&real, 0.1).unwrap().z, 3);
        assert_eq!(count_naive(&real, 0.1).unwrap().z, 3);
    }

    #[test]
    fn zero_activation_has_no_solutions() {
        let inst = two_spin().with_activation(Activation::zero());
        let r = count_exact(&inst, 0.1).unwrap();
        assert_eq!(r.z, 0);
        assert_eq!(r.log_z, f64::NEG_INFINITY);
        assert!((r.log_trunc - 0.2).abs() < 1e-15);
        assert!(!exists_solution(&inst).unwrap());
    }

    #[test]
    fn soft_free_energy_examples() {
        let inst = two_spin();
        let f = free_energy_soft(&inst, 1.0).unwrap();
        assert!((f - (3.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((f - 1.214283).abs() < 1e-6);
        let xi = DisorderMatrix::from_real(0, 7, vec![]).unwrap();
        let empty = Instance::new(hs0(), xi).unwrap();
        assert!((free_energy_soft(&empty, 2.0).unwrap() - 7.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let f50 = free_energy_soft(&inst, 50.0).unwrap();
        assert!((f50 - 3f64.ln()).abs() <= 4.0 * (-50f64).exp());
        let generic = Enumerator::default()
            .log_partition_with(&inst, &SoftActivation::new(hs0(), 1.0).unwrap())
            .unwrap();
        assert!((generic - f).abs() < 1e-12);
        let hard = Enumerator::default().log_partition_with(&inst, &hs0()).unwrap();
        assert!((hard - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn add_one_examples() {
        let xi = DisorderMatrix::from_real(0, 2, vec![]).unwrap();
        let inst = Instance::new(hs0(), xi).unwrap();
        assert_eq!(add_one_ratio(&inst, &[1.0, 1.0]).unwrap(), 0.75);

        let wide = Instance::new(Activation::interval(-1e6, 1e6).unwrap(), two_spin().xi().clone()).unwrap();
        assert_eq!(add_one_ratio(&wide, &[0.3, -2.0]).unwrap(), 1.0);

        let xi = DisorderMatrix::from_real(0, 3, vec![]).unwrap();
        let inst = Instance::new(hs0(), xi).unwrap();
        assert_eq!(add_one_ratio(&inst, &[1.0, 2.0, 4.5]).unwrap(), 0.5);

        let dead = two_spin().with_activation(Activation::zero());
        assert!(matches!(
            add_one_ratio(&dead, &[1.0, 1.0]),
            Err(LabError::EmptySolutionSet(_))
        ));
        assert!(add_one_ratio(&two_spin(), &[1.0]).is_err());
    }

    #[test]
    fn caps_are_enforced() {
        let xi = DisorderMatrix::from_real(0, 17, vec![]).unwrap();
        let inst = Instance::new(hs0(), xi).unwrap();
        assert!(matches!(count_naive(&inst, 0.1), Err(LabError::CapExceeded { .. })));
        assert!(matches!(
            Enumerator::with_cap(16).count_exact(&inst, 0.1),
            Err(LabError::CapExceeded { n: 17, cap: 16 })
        ));
    }

    #[test]
    fn solution_sample_postconditions() {
        let spec = DisorderSpec::gaussian();
        let inst = Instance::sample(&spec, hs0(), 12, 6, SeededStream::new(4)).unwrap();
        let s = SeededStream::new(99);
        let a = solution_sample(&inst, 50, s).unwrap();
        let b = solution_sample(&inst, 50, s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.configurations.len(), 50);
        for &c in &a.configurations {
            assert!(inst.satisfies(c));
        }
        let xi = DisorderMatrix::from_real(0, 20, vec![]).unwrap();
        let cube = Instance::new(hs0(), xi).unwrap();
        let draws = solution_sample(&cube, 3, s).unwrap();
        assert_eq!(draws.configurations.len(), 3);
        assert_ne!(draws.configurations[0], draws.configurations[1]);
        let dead = inst.with_activation(Activation::zero());
        assert!(solution_sample(&dead, 1, s).is_err());
    }

    #[test]
    fn solutions_match_count_and_satisfy() {
        let spec = DisorderSpec::rademacher();
        let inst = Instance::sample(&spec, hs0(), 11, 5, SeededStream::new(8)).unwrap();
        let sols = Enumerator::default().solutions(&inst).unwrap();
        assert_eq!(sols.len() as u64, count_exact(&inst, 0.1).unwrap().z);
        for &c in &sols {
            assert!(inst.satisfies(c));
            let vals = inst.constraint_values(c);
            assert!(vals.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn thread_count_does_not_change_counts() {
        let spec = DisorderSpec::gaussian();
        let inst = Instance::sample(
            &spec,
            Activation::symmetric_interval(0.8).unwrap(),
            16,
            9,
            SeededStream::new(2),
        )
        .unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let e = Enumerator::default();
        let h1 = one.install(|| e.violation_histogram(&inst).unwrap());
        let h4 = four.install(|| e.violation_histogram(&inst).unwrap());
        assert_eq!(h1, h4);
        let coarse = Enumerator { segment_bits: 0, ..e };
        assert_eq!(coarse.violation_histogram(&inst).unwrap(), h1);
    }

    #[test]
    fn prefix_counts_match_truncated_instances() {
        let spec = DisorderSpec::uniform();
        let inst = Instance::sample(&spec, hs0(), 12, 10, SeededStream::new(6)).unwrap();
        let e = Enumerator::default();
        let prefixes: Vec<usize> = (0..=10).collect();
        let counts = e.prefix_counts(&inst, &prefixes).unwrap();
        for (&j, &z) in prefixes.iter().zip(&counts) {
            assert_eq!(z, e.count_exact(&inst.truncated(j), 0.1).unwrap().z);
        }
        assert!(e.prefix_counts(&inst, &[11]).is_err());
    }

    #[test]
    fn lattice_drift_is_exact_and_float_drift_small() {
        let e = Enumerator::default();
        let lat = Instance::sample(&DisorderSpec::rademacher(), hs0(), 14, 4, SeededStream::new(1)).unwrap();
        let (w, d) = e.traversal_drift(&lat).unwrap();
        assert_eq!(w, d);
        let real = Instance::sample(&DisorderSpec::gaussian(), hs0(), 14, 4, SeededStream::new(1)).unwrap();
        let (w, d) = e.traversal_drift(&real).unwrap();
        for (a, b) in w.iter().zip(&d) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn config_helpers() {
        let c = Config::from_spins(&[1, -1, 1, 1]);
        assert_eq!(c.to_spins(4), vec![1, -1, 1, 1]);
        assert_eq!(c.negated(4).to_spins(4), vec![-1, 1, -1, -1]);
        assert_eq!(c.dot(c, 4), 4);
        assert_eq!(c.dot(c.negated(4), 4), -4);
    }
}
