//! Block decompositions of `[N]` and families of configurations that are
//! pairwise separated on chosen blocks.
//!
//! Two configurations are `eps`-separated on block `I_j` when
//! `|(sigma_I, tau_I)| / K <= 1 - eps`. All block inner products are exact
//! integers; the threshold `(1 - eps) K` is converted once to the largest
//! admissible integer inner product.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::partition::{full_mask, Config};
use crate::stream::SeededStream;

/// Consecutive blocks `I_1..I_L` of size `K = N / L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockDecomposition {
    n: usize,
    l: usize,
    k: usize,
}

impl BlockDecomposition {
    pub fn new(n: usize, l: usize) -> Result<Self> {
        if l == 0 || n == 0 || !n.is_multiple_of(l) {
            return Err(LabError::Config(format!(
                "K·L=N required: cannot split n = {n} into L = {l} equal blocks"
            )));
        }
        if n > 64 {
            return Err(LabError::Domain(format!(
                "block decompositions are limited to n <= 64, got {n}"
            )));
        }
        Ok(BlockDecomposition { n, l, k: n / l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        j * self.k..(j + 1) * self.k
    }

    pub fn blocks(&self) -> Vec<Range<usize>> {
        (0..self.l).map(|j| self.block(j)).collect()
    }

    fn mask(&self, j: usize) -> u64 {
        full_mask(self.k) << (j * self.k)
    }

    /// `(sigma_{I_j}, tau_{I_j})`
    pub fn block_dot(&self, sigma: Config, tau: Config, j: usize) -> i64 {
        self.k as i64 - 2 * ((sigma.0 ^ tau.0) & self.mask(j)).count_ones() as i64
    }

    /// Largest `|block_dot|` still counted as `eps`-separated.
    pub fn separation_limit(&self, eps: f64) -> i64 {
        ((1.0 - eps) * self.k as f64 + 1e-9).floor() as i64
    }

    pub fn separated_on(&self, sigma: Config, tau: Config, j: usize, eps: f64) -> bool {
        self.block_dot(sigma, tau, j).abs() <= self.separation_limit(eps)
    }

    /// Number of blocks on which the pair is `eps`-separated.
    pub fn separated_block_count(&self, sigma: Config, tau: Config, eps: f64) -> usize {
        let limit = self.separation_limit(eps);
        (0..self.l)
            .filter(|&j| self.block_dot(sigma, tau, j).abs() <= limit)
            .count()
    }
}

/// `(sigma, tau) / N`
pub fn overlap(sigma: Config, tau: Config, n: usize) -> f64 {
    sigma.dot(tau, n) as f64 / n as f64
}

/// `(sigma_{I_j}, tau_{I_j}) / K`
pub fn block_overlap(sigma: Config, tau: Config, blocks: &BlockDecomposition, j: usize) -> Result<f64> {
    if j >= blocks.l() {
        return Err(LabError::Shape(format!(
            "block {j} out of range for L = {}",
            blocks.l()
        )));
    }
    Ok(blocks.block_dot(sigma, tau, j) as f64 / blocks.k() as f64)
}

/// Overlap on spin vectors of any length.
pub fn overlap_spins(sigma: &[i8], tau: &[i8]) -> Result<f64> {
    if sigma.len() != tau.len() || sigma.is_empty() {
        return Err(LabError::Shape(format!(
            "overlap needs equal nonzero dimensions, got {} and {}",
            sigma.len(),
            tau.len()
        )));
    }
    let dot: i64 = sigma.iter().zip(tau).map(|(&a, &b)| a as i64 * b as i64).sum();
    Ok(dot as f64 / sigma.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailProbability {
    pub probability: f64,
    /// Monte Carlo standard error; `None` for exact evaluations.
    pub se: Option<f64>,
    /// Ordered pairs counted and considered (exact evaluations only).
    pub hits: Option<u128>,
    pub pairs: u128,
}

/// Pair counts above which the tail is estimated by sampling.
pub const EXACT_PAIR_LIMIT: usize = 4096;
/// Dimension up to which the autocorrelation route gives an exact tail for large sets.
pub const EXACT_TRANSFORM_DIM: usize = 20;

/// `mu x mu(|(sigma, tau)| / N >= t)` for `mu` uniform on `s`.
///
/// Exact by pair enumeration for `|S| <= 4096`, exact through the
/// Walsh-Hadamard autocorrelation of the indicator of `S` when `n <= 20`,
/// and otherwise estimated from `mc_pairs` sampled pairs.
pub fn pair_overlap_tail(
    s: &[Config],
    n: usize,
    t: f64,
    mc_pairs: usize,
    stream: SeededStream,
) -> Result<TailProbability> {
    if s.len() < 2 {
        return Err(LabError::Domain("pair_overlap_tail needs |S| >= 2".into()));
    }
    let min_dot = (t * n as f64 - 1e-9).ceil() as i64;
    let hit = |d: i64| d.abs() >= min_dot;
    let size = s.len() as u128;
    if s.len() <= EXACT_PAIR_LIMIT {
        let mut hits = 0u128;
        for &a in s {
            for &b in s {
                hits += hit(a.dot(b, n)) as u128;
            }
        }
        return Ok(TailProbability {
            probability: hits as f64 / (size * size) as f64,
            se: None,
            hits: Some(hits),
            pairs: size * size,
        });
    }
    if n <= EXACT_TRANSFORM_DIM {
        let by_distance = xor_autocorrelation(s, n);
        let hits: u128 = by_distance
            .iter()
            .enumerate()
            .filter(|&(d, _)| hit(n as i64 - 2 * d as i64))
            .map(|(_, &c)| c as u128)
            .sum();
        return Ok(TailProbability {
            probability: hits as f64 / (size * size) as f64,
            se: None,
            hits: Some(hits),
            pairs: size * size,
        });
    }
    let mut rng = stream.rng(0);
    let mut hits = 0usize;
    for _ in 0..mc_pairs {
        let a = s[rng.random_range(0..s.len())];
        let b = s[rng.random_range(0..s.len())];
        hits += hit(a.dot(b, n)) as usize;
    }
    let p = hits as f64 / mc_pairs as f64;
    Ok(TailProbability {
        probability: p,
        se: Some((p * (1.0 - p) / mc_pairs as f64).sqrt()),
        hits: None,
        pairs: mc_pairs as u128,
    })
}

/// Number of ordered pairs of `s` at each Hamming distance.
fn xor_autocorrelation(s: &[Config], n: usize) -> Vec<u64> {
    let len = 1usize << n;
    let mut f = vec![0i64; len];
    for c in s {
        f[c.0 as usize & (len - 1)] = 1;
    }
    walsh_hadamard(&mut f);
    for v in f.iter_mut() {
        *v *= *v;
    }
    walsh_hadamard(&mut f);
    let mut by_distance = vec![0u64; n + 1];
    for (d, &v) in f.iter().enumerate() {
        by_distance[d.count_ones() as usize] += (v >> n) as u64;
    }
    by_distance
}

fn walsh_hadamard(f: &mut [i64]) {
    let mut h = 1;
    while h < f.len() {
        for chunk in f.chunks_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Draws `n_tuple` i.i.d. uniform elements of `s` until every pair is
/// `eps`-separated on at least `min_blocks` blocks.
pub fn sample_pairwise_separated(
    s: &[Config],
    n_tuple: usize,
    eps: f64,
    blocks: &BlockDecomposition,
    min_blocks: usize,
    max_retries: usize,
    stream: SeededStream,
) -> Result<Vec<Config>> {
    if n_tuple > s.len() {
        return Err(LabError::Domain(format!(
            "cannot draw {n_tuple} separated elements from a set of size {}",
            s.len()
        )));
    }
    let mut worst_seen = usize::MAX;
    for attempt in 0..max_retries.max(1) {
        let mut rng = stream.rng(attempt as u64);
        let tuple: Vec<Config> = (0..n_tuple).map(|_| s[rng.random_range(0..s.len())]).collect();
        let mut ok = true;
        'pairs: for i in 0..tuple.len() {
            for j in i + 1..tuple.len() {
                let count = blocks.separated_block_count(tuple[i], tuple[j], eps);
                worst_seen = worst_seen.min(count);
                if count < min_blocks {
                    ok = false;
                    break 'pairs;
                }
            }
        }
        if ok {
            debug_assert!(all_pairs_well_separated(&tuple, blocks, eps, min_blocks));
            return Ok(tuple);
        }
    }
    Err(LabError::RetriesExhausted {
        attempts: max_retries.max(1),
        detail: format!(
            "no {n_tuple}-tuple with every pair separated on >= {min_blocks} blocks (worst pair seen: {} blocks)",
            if worst_seen == usize::MAX { 0 } else { worst_seen }
        ),
    })
}

fn all_pairs_well_separated(set: &[Config], blocks: &BlockDecomposition, eps: f64, min_blocks: usize) -> bool {
    set.iter().enumerate().all(|(i, &a)| {
        set[i + 1..]
            .iter()
            .all(|&b| blocks.separated_block_count(a, b, eps) >= min_blocks)
    })
}

/// One restriction step of the greedy construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GreedyStep {
    /// Index into the current set of the configuration that triggered the step.
    pub pivot: usize,
    pub pivot_config: Config,
    /// Whether the pivot was used with flipped sign.
    pub negated: bool,
    pub block: usize,
    /// Size of the set after restriction.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyOutcome {
    pub t_set: Vec<Config>,
    /// Blocks never retired, ascending.
    pub j_circ: Vec<usize>,
    pub trace: Vec<GreedyStep>,
}

/// Greedy restriction: while some `sigma` in `Omega ∪ -Omega` and unused
/// block `j` have more than an `eta` fraction of `Omega` strictly above
/// overlap `1 - eps` on `I_j`, restrict `Omega` to those elements and retire
/// `j`. Candidates are scanned by element, then sign (`+` before `-`), then
/// block index; the first violator is taken.
pub fn greedy_extract(s_prime: &[Config], blocks: &BlockDecomposition, eps: f64, eta: f64) -> Result<GreedyOutcome> {
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(LabError::Domain(format!("eta must lie in (0, 1/2], got {eta}")));
    }
    let n = blocks.n();
    let limit = blocks.separation_limit(eps);
    let mut omega: Vec<Config> = s_prime.to_vec();
    let mut unused: Vec<usize> = (0..blocks.l()).collect();
    let mut trace = Vec::new();

    while !unused.is_empty() && !omega.is_empty() {
        let size = omega.len() as f64;
        let mut found = None;
        'scan: for (idx, &sigma) in omega.iter().enumerate() {
            for (negated, pivot) in [(false, sigma), (true, sigma.negated(n))] {
                for (slot, &j) in unused.iter().enumerate() {
                    let close = omega
                        .iter()
                        .filter(|&&tau| blocks.block_dot(pivot, tau, j) > limit)
                        .count();
                    if close as f64 / size > eta {
                        found = Some((idx, pivot, negated, slot, j));
                        break 'scan;
                    }
                }
            }
        }
        let Some((idx, pivot, negated, slot, j)) = found else {
            break;
        };
        omega.retain(|&tau| blocks.block_dot(pivot, tau, j) > limit);
        unused.remove(slot);
        trace.push(GreedyStep {
            pivot: idx,
            pivot_config: pivot,
            negated,
            block: j,
            kept: omega.len(),
        });
    }

    let outcome = GreedyOutcome {
        t_set: omega,
        j_circ: unused,
        trace,
    };
    check_sparse_closeness(&outcome, blocks, eps, eta)?;
    Ok(outcome)
}

/// For every `sigma` in `T` and `j` in `J_o`, at most a `2 eta` fraction of
/// `T` has `|overlap on I_j| > 1 - eps`.
fn check_sparse_closeness(out: &GreedyOutcome, blocks: &BlockDecomposition, eps: f64, eta: f64) -> Result<()> {
    let limit = blocks.separation_limit(eps);
    let size = out.t_set.len() as f64;
    for &sigma in &out.t_set {
        for &j in &out.j_circ {
            let close = out
                .t_set
                .iter()
                .filter(|&&tau| blocks.block_dot(sigma, tau, j).abs() > limit)
                .count();
            if close as f64 > 2.0 * eta * size {
                return Err(LabError::Certification(format!(
                    "greedy output has {close}/{size} close elements on block {j} (> 2·eta)"
                )));
            }
        }
    }
    Ok(())
}

/// A set of configurations with every pair `eps`-separated on every block of `j_star`.
/// Only constructible through the certifying constructor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparatedFamily {
    omega: Vec<Config>,
    j_star: Vec<usize>,
    eps: f64,
    gamma: f64,
    blocks: BlockDecomposition,
}

impl SeparatedFamily {
    pub fn new(
        omega: Vec<Config>,
        j_star: Vec<usize>,
        eps: f64,
        gamma: f64,
        blocks: BlockDecomposition,
    ) -> Result<Self> {
        if let Some(&j) = j_star.iter().find(|&&j| j >= blocks.l()) {
            return Err(LabError::Certification(format!("block {j} out of range")));
        }
        for (i, &a) in omega.iter().enumerate() {
            for &b in &omega[i + 1..] {
                if a == b {
                    return Err(LabError::Certification("family contains a duplicate".into()));
                }
                for &j in &j_star {
                    if !blocks.separated_on(a, b, j, eps) {
                        return Err(LabError::Certification(format!(
                            "pair {:#x}, {:#x} has block overlap {} on block {j}, above 1 - eps = {}",
                            a.0,
                            b.0,
                            blocks.block_dot(a, b, j) as f64 / blocks.k() as f64,
                            1.0 - eps
                        )));
                    }
                }
            }
        }
        Ok(SeparatedFamily {
            omega,
            j_star,
            eps,
            gamma,
            blocks,
        })
    }

    pub fn omega(&self) -> &[Config] {
        &self.omega
    }

    pub fn j_star(&self) -> &[usize] {
        &self.j_star
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn blocks(&self) -> &BlockDecomposition {
        &self.blocks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractParams {
    pub delta: f64,
    pub eps: f64,
    pub gamma: f64,
    pub l: usize,
    /// Separation level for the first (pairwise well-separated) stage.
    pub well_sep_eps: f64,
    pub max_retries: usize,
    /// Smallest acceptable family.
    pub min_size: usize,
    /// Cap on the first-stage tuple size.
    pub max_tuple: usize,
    pub eta_min: f64,
}

impl ExtractParams {
    pub fn new(delta: f64, eps: f64, gamma: f64, l: usize) -> Self {
        ExtractParams {
            delta,
            eps,
            gamma,
            l,
            well_sep_eps: eps,
            max_retries: 32,
            min_size: 2,
            max_tuple: 64,
            eta_min: 1e-3,
        }
    }

    /// `eta = exp(-9 N delta / (4 L))` clamped to `[eta_min, 1/2]`.
    pub fn eta(&self, n: usize) -> f64 {
        let raw = (-9.0 * n as f64 * self.delta / (4.0 * self.l as f64)).exp();
        let eta = raw.clamp(self.eta_min, 0.5);
        if eta != raw {
            log::info!("eta clamped from {raw:.3e} to {eta:.3e}");
        }
        eta
    }

    fn j_star_size(&self) -> usize {
        ((self.l as f64 * self.gamma - 1e-9).ceil() as usize).clamp(1, self.l)
    }

    fn min_blocks(&self) -> usize {
        ((2.0 * self.l as f64 * self.gamma - 1e-9).ceil() as usize).clamp(1, self.l)
    }

    /// Logs the asymptotic parameter relations that desk-scale runs usually violate.
    fn warn_sanity(&self) {
        if let Ok(psi) = crate::formulas::psi2((8.0 * self.eps).min(2.0)) {
            if psi > self.delta {
                log::warn!("psi2(8 eps) = {psi:.4} exceeds delta = {}", self.delta);
            }
        }
        let cap = self.delta / (2.0 * std::f64::consts::LN_2);
        if self.gamma > cap {
            log::warn!("gamma = {} exceeds delta/(2 ln 2) = {cap:.4}", self.gamma);
        }
    }
}

/// Full extraction pipeline: a pairwise well-separated tuple, greedy
/// restriction, then a greedy clique inside `T` on the best `J_*` subset of
/// `J_o`. Only certified families are returned.
pub fn extract_separated_family(
    s: &[Config],
    n: usize,
    params: &ExtractParams,
    stream: SeededStream,
) -> Result<SeparatedFamily> {
    let blocks = BlockDecomposition::new(n, params.l)?;
    if s.is_empty() {
        return Err(LabError::Domain("cannot extract from an empty set".into()));
    }
    params.warn_sanity();
    let j_size = params.j_star_size();
    if s.len() == 1 {
        return SeparatedFamily::new(s.to_vec(), (0..j_size).collect(), params.eps, params.gamma, blocks);
    }
    let min_size = params.min_size.max(1).min(s.len());
    let min_blocks = params.min_blocks();
    let eta = params.eta(n);

    let target = (2.5 * n as f64 * params.delta).exp().floor();
    let mut tuple = (target as usize)
        .clamp(min_size, params.max_tuple.max(min_size))
        .min(s.len());
    let mut attempts = 0usize;
    let mut best_size = 0usize;
    loop {
        let stage = stream.fork(attempts as u64);
        attempts += 1;
        match sample_pairwise_separated(
            s,
            tuple,
            params.well_sep_eps,
            &blocks,
            min_blocks,
            params.max_retries,
            stage,
        ) {
            Ok(s_prime) => {
                let greedy = greedy_extract(&s_prime, &blocks, params.eps, eta)?;
                if greedy.j_circ.len() >= j_size {
                    let (omega, j_star) = best_clique(&greedy, &blocks, params.eps, j_size, stage.fork(1));
                    best_size = best_size.max(omega.len());
                    if omega.len() >= min_size {
                        return SeparatedFamily::new(omega, j_star, params.eps, params.gamma, blocks);
                    }
                }
            }
            Err(LabError::RetriesExhausted { .. }) => {}
            Err(e) => return Err(e),
        }
        if tuple <= min_size || attempts >= 64 {
            break;
        }
        tuple = (tuple / 2).max(min_size);
    }
    Err(LabError::RetriesExhausted {
        attempts,
        detail: format!(
            "no certified family of size >= {min_size} (best {best_size}); |S| = {}, L = {}, eps = {}",
            s.len(),
            params.l,
            params.eps
        ),
    })
}

/// Largest greedy clique in `T` over `j_size`-subsets of `J_o` (first best wins).
fn best_clique(
    greedy: &GreedyOutcome,
    blocks: &BlockDecomposition,
    eps: f64,
    j_size: usize,
    stream: SeededStream,
) -> (Vec<Config>, Vec<usize>) {
    let mut order = greedy.t_set.clone();
    order.shuffle(&mut stream.rng(0));
    let mut best: (Vec<Config>, Vec<usize>) = (Vec::new(), greedy.j_circ[..j_size].to_vec());
    for combo in combinations(&greedy.j_circ, j_size).into_iter().take(256) {
        let mut chosen: Vec<Config> = Vec::new();
        for &tau in &order {
            if chosen
                .iter()
                .all(|&c| c != tau && combo.iter().all(|&j| blocks.separated_on(c, tau, j, eps)))
            {
                chosen.push(tau);
            }
        }
        if chosen.len() > best.0.len() {
            best = (chosen, combo);
        }
    }
    best
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// `M_0..M_L` with `M_k = (1/sqrt N) sum_{j <= k} (xi_{I_j}, sigma_{I_j})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPath {
    pub values: Vec<f64>,
}

pub fn block_path(sigma: Config, xi: &[f64], blocks: &BlockDecomposition) -> Result<BlockPath> {
    if xi.len() != blocks.n() {
        return Err(LabError::Shape(format!(
            "disorder vector has {} entries, blocks cover {}",
            xi.len(),
            blocks.n()
        )));
    }
    let sqrt_n = (blocks.n() as f64).sqrt();
    let mut values = Vec::with_capacity(blocks.l() + 1);
    values.push(0.0);
    let mut raw = 0.0;
    for j in 0..blocks.l() {
        for i in blocks.block(j) {
            raw += xi[i] * sigma.spin(i) as f64;
        }
        values.push(raw / sqrt_n);
    }
    Ok(BlockPath { values })
}

/// Distance from `x` to `[a, b]`.
pub fn dist_to_interval(x: f64, (a, b): (f64, f64)) -> f64 {
    if x < a {
        a - x
    } else if x > b {
        x - b
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainOutcome {
    pub survivors: Vec<Config>,
    /// `|Omega^(l)| / |Omega|`, then `|Omega^(k+1)| / |Omega^(k)|` for `k = l..L-1`
    /// (0 once a stage is empty).
    pub step_ratios: Vec<f64>,
    /// `|Omega|, |Omega^(l)|, ..., |Omega^(L)|`
    pub sizes: Vec<usize>,
    /// Distance budget per remaining block, `R sqrt(eps nu / L)`.
    pub unit: f64,
}

/// Interval filtering along the block process: keep `sigma` while
/// `dist(M_k(sigma), [a, b])` is within `(L - k)` budget units, starting at
/// `k = l = L(1 - gamma)`. Survivors have `M_L` inside `[a, b]`.
///
/// `r_bar_param` is the constant floor in `r = max(|a|, |b|, r_bar_param)`,
/// and the budget unit is `sqrt(r / gamma) sqrt(eps) sqrt(nu) / sqrt(L)`.
pub fn interval_chain(
    family: &SeparatedFamily,
    xi: &[f64],
    target: (f64, f64),
    r_bar_param: f64,
    nu: f64,
) -> Result<ChainOutcome> {
    let (a, b) = target;
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(LabError::Domain(format!(
            "target must be a finite interval, got [{a}, {b}]"
        )));
    }
    let blocks = family.blocks();
    let l_total = blocks.l();
    let gamma = family.gamma();
    let tail_blocks = l_total as f64 * gamma;
    if !(gamma > 0.0 && gamma <= 1.0) || (tail_blocks - tail_blocks.round()).abs() > 1e-9 {
        return Err(LabError::Domain(format!(
            "L(1 - gamma) must be an integer: L = {l_total}, gamma = {gamma}"
        )));
    }
    let tail_blocks = tail_blocks.round() as usize;
    let start = l_total - tail_blocks;
    let r_bar = a.abs().max(b.abs()).max(r_bar_param);
    let big_r = (r_bar / gamma).sqrt();
    let unit = big_r * family.eps().sqrt() * nu.sqrt() / (l_total as f64).sqrt();

    let paths: Vec<(Config, BlockPath)> = family
        .omega()
        .iter()
        .map(|&s| Ok((s, block_path(s, xi, blocks)?)))
        .collect::<Result<_>>()?;

    let ratio = |after: usize, before: usize| {
        if before == 0 {
            0.0
        } else {
            after as f64 / before as f64
        }
    };
    let mut sizes = vec![paths.len()];
    let mut current: Vec<&(Config, BlockPath)> = paths
        .iter()
        .filter(|(_, p)| dist_to_interval(p.values[start], target) <= tail_blocks as f64 * unit)
        .collect();
    let mut step_ratios = vec![ratio(current.len(), paths.len())];
    sizes.push(current.len());
    for k in start..l_total {
        let budget = (l_total - k - 1) as f64 * unit;
        let before = current.len();
        current.retain(|(_, p)| dist_to_interval(p.values[k + 1], target) <= budget);
        step_ratios.push(ratio(current.len(), before));
        sizes.push(current.len());
    }
    Ok(ChainOutcome {
        survivors: current.into_iter().map(|(s, _)| *s).collect(),
        step_ratios,
        sizes,
        unit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(spins: &[i8]) -> Config {
        Config::from_spins(spins)
    }

    #[test]
    fn block_decomposition_requires_divisibility() {
        let err = BlockDecomposition::new(10, 3).unwrap_err();
        assert!(err.to_string().contains("K·L=N required"));
        let b = BlockDecomposition::new(12, 3).unwrap();
        assert_eq!(b.k(), 4);
        assert_eq!(b.blocks(), vec![0..4, 4..8, 8..12]);
    }

    #[test]
    fn overlap_examples() {
        let n = 4;
        let s = cfg(&[1, 1, 1, 1]);
        let t = cfg(&[1, 1, -1, -1]);
        assert_eq!(overlap(s, s, n), 1.0);
        assert_eq!(overlap(s, s.negated(n), n), -1.0);
        assert_eq!(overlap(s, t, n), 0.0);
        let b = BlockDecomposition::new(4, 2).unwrap();
        assert_eq!(block_overlap(s, t, &b, 0).unwrap(), 1.0);
        assert_eq!(block_overlap(s, t, &b, 1).unwrap(), -1.0);
        assert!(block_overlap(s, t, &b, 2).is_err());
        assert!(overlap_spins(&[1, 1], &[1]).is_err());
        assert_eq!(overlap_spins(&[1, -1, 1, 1], &[1, 1, 1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn pair_tail_full_cube_n10() {
        let cube: Vec<Config> = (0..1u64 << 10).map(Config).collect();
        let tp = pair_overlap_tail(&cube, 10, 0.6, 0, SeededStream::new(0)).unwrap();
        assert_eq!(tp.hits, Some(112 * 1024));
        assert_eq!(tp.probability, 112.0 / 1024.0);
    }

    #[test]
    fn pair_tail_antipodal_pair() {
        let s = cfg(&[1, -1, 1, 1, -1, 1]);
        let set = [s, s.negated(6)];
        let tp = pair_overlap_tail(&set, 6, 0.5, 0, SeededStream::new(0)).unwrap();
        assert_eq!(tp.probability, 1.0);
        assert!(pair_overlap_tail(&set[..1], 6, 0.5, 0, SeededStream::new(0)).is_err());
    }

    #[test]
    fn pair_tail_transform_matches_enumeration() {
        // A 5000-element subset of the 13-cube, exact both ways.
        let mut rng = SeededStream::new(5).rng(0);
        let mut set: Vec<Config> = (0..1u64 << 13).map(Config).collect();
        set.shuffle(&mut rng);
        set.truncate(5000);
        let by_transform = pair_overlap_tail(&set, 13, 0.3, 0, SeededStream::new(0)).unwrap();
        let min_dot = (0.3f64 * 13.0 - 1e-9).ceil() as i64;
        let mut hits = 0u128;
        for &a in &set {
            for &b in &set {
                hits += (a.dot(b, 13).abs() >= min_dot) as u128;
            }
        }
        assert_eq!(by_transform.hits, Some(hits));
    }

    #[test]
    fn pairwise_sampling_edge_cases() {
        let b = BlockDecomposition::new(12, 3).unwrap();
        let s = [cfg(&[1; 12])];
        let one = sample_pairwise_separated(&s, 1, 0.25, &b, 2, 1, SeededStream::new(1)).unwrap();
        assert_eq!(one, s.to_vec());
        assert!(sample_pairwise_separated(&s, 2, 0.25, &b, 2, 10, SeededStream::new(1)).is_err());
    }

    #[test]
    fn pairwise_sampling_on_cube_succeeds_quickly() {
        let b = BlockDecomposition::new(12, 3).unwrap();
        let cube: Vec<Config> = (0..1u64 << 12).map(Config).collect();
        let mut successes = 0;
        for seed in 0..200 {
            if let Ok(t) = sample_pairwise_separated(&cube, 4, 0.25, &b, 2, 10, SeededStream::new(seed)) {
                assert!(all_pairs_well_separated(&t, &b, 0.25, 2));
                successes += 1;
            }
        }
        assert!(successes >= 198, "{successes}/200");
    }

    #[test]
    fn greedy_no_violators_keeps_everything() {
        let b = BlockDecomposition::new(8, 2).unwrap();
        let set = vec![
            cfg(&[1, 1, 1, 1, 1, 1, 1, 1]),
            cfg(&[1, 1, -1, -1, 1, -1, 1, -1]),
            cfg(&[1, -1, 1, -1, 1, 1, -1, -1]),
        ];
        // Every pair and every sign has block overlap 0: fractions are 1/3 <= 0.4.
        let out = greedy_extract(&set, &b, 0.25, 0.4).unwrap();
        assert_eq!(out.t_set, set);
        assert_eq!(out.j_circ, vec![0, 1]);
        assert!(out.trace.is_empty());

        let single = greedy_extract(&set[..1], &b, 0.25, 0.1).unwrap();
        // A lone element is close to itself, so the fraction 1 > eta retires blocks.
        assert_eq!(single.t_set, set[..1].to_vec());
        assert!(single.trace.len() <= 2);
        assert!(greedy_extract(&set, &b, 0.25, 0.6).is_err());
    }

    #[test]
    fn separated_family_rejects_uncertified() {
        let b = BlockDecomposition::new(8, 2).unwrap();
        let s = cfg(&[1; 8]);
        assert!(SeparatedFamily::new(vec![s, s.negated(8)], vec![0], 0.25, 0.5, b.clone()).is_err());
        assert!(SeparatedFamily::new(vec![s, s], vec![], 0.25, 0.5, b.clone()).is_err());
        let t = cfg(&[1, 1, -1, -1, 1, 1, 1, 1]);
        assert!(SeparatedFamily::new(vec![s, t], vec![0], 0.25, 0.5, b.clone()).is_ok());
        assert!(SeparatedFamily::new(vec![s, t], vec![1], 0.25, 0.5, b).is_err());
    }

    #[test]
    fn extract_degenerate_inputs() {
        let params = ExtractParams::new(0.1, 0.25, 1.0 / 3.0, 3);
        let s = cfg(&[1, -1, 1, 1, -1, 1, 1, 1, -1, 1, -1, -1]);
        let fam = extract_separated_family(&[s], 12, &params, SeededStream::new(3)).unwrap();
        assert_eq!(fam.omega(), &[s]);
        let err = extract_separated_family(&[s, s.negated(12)], 12, &params, SeededStream::new(3)).unwrap_err();
        assert!(matches!(err, LabError::RetriesExhausted { .. }), "{err}");
        assert!(extract_separated_family(&[s], 10, &params, SeededStream::new(3)).is_err());
    }

    #[test]
    fn extract_from_cube() {
        let cube: Vec<Config> = (0..1u64 << 12).map(Config).collect();
        let params = ExtractParams::new(0.1, 0.25, 1.0 / 3.0, 3);
        let fam = extract_separated_family(&cube, 12, &params, SeededStream::new(17)).unwrap();
        assert!(fam.omega().len() >= 4, "size {}", fam.omega().len());
        assert_eq!(fam.j_star().len(), 1);
    }

    #[test]
    fn block_path_examples() {
        let b1 = BlockDecomposition::new(6, 1).unwrap();
        let s = cfg(&[1, -1, 1, 1, -1, 1]);
        let xi = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let p = block_path(s, &xi, &b1).unwrap();
        let direct: f64 = xi.iter().enumerate().map(|(i, x)| x * s.spin(i) as f64).sum::<f64>() / 6f64.sqrt();
        assert_eq!(p.values, vec![0.0, direct]);

        let b3 = BlockDecomposition::new(6, 3).unwrap();
        let own: Vec<f64> = s.to_spins(6).iter().map(|&v| v as f64).collect();
        let p = block_path(s, &own, &b3).unwrap();
        for (k, v) in p.values.iter().enumerate() {
            assert!((v - (2 * k) as f64 / 6f64.sqrt()).abs() < 1e-15);
        }
        assert!(block_path(s, &xi[..5], &b3).is_err());
    }

    #[test]
    fn interval_chain_trivial_cases() {
        let b = BlockDecomposition::new(8, 4).unwrap();
        let s = cfg(&[1, 1, -1, 1, -1, -1, 1, 1]);
        let fam = SeparatedFamily::new(vec![s], vec![2, 3], 0.25, 0.5, b.clone()).unwrap();
        let own: Vec<f64> = s.to_spins(8).iter().map(|&v| v as f64).collect();
        let root = 8f64.sqrt();
        let out = interval_chain(&fam, &own, (root - 0.5, root + 0.5), 1.0, 1.0).unwrap();
        assert_eq!(out.survivors, vec![s]);

        let t = cfg(&[1, -1, 1, -1, 1, 1, -1, 1]);
        let u = cfg(&[-1, 1, 1, 1, 1, -1, -1, -1]);
        let fam = SeparatedFamily::new(vec![s, t, u], vec![], 0.25, 0.5, b).unwrap();
        let xi = [0.5, -1.0, 0.25, 2.0, -0.75, 1.5, 0.1, -0.3];
        let out = interval_chain(&fam, &xi, (-1e6, 1e6), 1.0, 1.0).unwrap();
        assert_eq!(out.survivors, fam.omega().to_vec());
        assert!(out.step_ratios.iter().all(|&r| r == 1.0));
        assert!(interval_chain(&fam, &xi, (1.0, 0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn combinations_enumerate() {
        assert_eq!(combinations(&[0, 2, 3], 2), vec![vec![0, 2], vec![0, 3], vec![2, 3]]);
        assert_eq!(combinations(&[1], 2), Vec::<Vec<usize>>::new());
    }
}
