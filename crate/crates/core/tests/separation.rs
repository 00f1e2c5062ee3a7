use perceptron_lab::partition::full_mask;
use perceptron_lab::separation::{
    block_path, greedy_extract, interval_chain, pair_overlap_tail, sample_pairwise_separated, BlockPath,
};
use perceptron_lab::{BlockDecomposition, Config, DisorderSpec, LabError, SeededStream, SeparatedFamily};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spins(c: Config, n: usize) -> Vec<f64> {
    c.to_spins(n).iter().map(|&s| s as f64).collect()
}

fn block_overlap(a: &[f64], b: &[f64], j: usize, k: usize) -> f64 {
    (j * k..(j + 1) * k).map(|i| a[i] * b[i]).sum::<f64>() / k as f64
}

struct OracleRun {
    t_set: Vec<Config>,
    unused: Vec<usize>,
    trace: Vec<(Config, bool, usize, usize)>,
}

/// Step-by-step greedy restriction with real-valued block overlaps.
fn greedy_oracle(set: &[Config], n: usize, l: usize, eps: f64, eta: f64) -> OracleRun {
    let k = n / l;
    let mut omega = set.to_vec();
    let mut unused: Vec<usize> = (0..l).collect();
    let mut trace = Vec::new();
    loop {
        let mut step = None;
        'search: for &sigma in &omega {
            for negated in [false, true] {
                let pivot = if negated { sigma.negated(n) } else { sigma };
                let p = spins(pivot, n);
                for &j in &unused {
                    let close: Vec<Config> = omega
                        .iter()
                        .copied()
                        .filter(|&t| block_overlap(&p, &spins(t, n), j, k) > 1.0 - eps)
                        .collect();
                    if close.len() as f64 > eta * omega.len() as f64 {
                        step = Some((pivot, negated, j, close));
                        break 'search;
                    }
                }
            }
        }
        let Some((pivot, negated, j, close)) = step else {
            return OracleRun {
                t_set: omega,
                unused,
                trace,
            };
        };
        trace.push((pivot, negated, j, close.len()));
        omega = close;
        unused.retain(|&u| u != j);
    }
}

fn sparse_closeness_holds(run: &OracleRun, n: usize, l: usize, eps: f64, eta: f64) -> bool {
    let k = n / l;
    run.t_set.iter().all(|&s| {
        let a = spins(s, n);
        run.unused.iter().all(|&j| {
            let close = run
                .t_set
                .iter()
                .filter(|&&t| block_overlap(&a, &spins(t, n), j, k).abs() > 1.0 - eps)
                .count();
            close as f64 <= 2.0 * eta * run.t_set.len() as f64
        })
    })
}

fn layout() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![Just((8, 2)), Just((8, 4)), Just((12, 2)), Just((12, 3)), Just((12, 4))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn greedy_matches_trace_oracle((n, l) in layout(), raw in vec(any::<u64>(), 1..40), eps in 0.1f64..0.9, eta in 0.05f64..=0.5) {
        let mut set: Vec<Config> = raw.iter().map(|&r| Config(r & full_mask(n))).collect();
        set.sort();
        set.dedup();
        let blocks = BlockDecomposition::new(n, l).unwrap();
        let oracle = greedy_oracle(&set, n, l, eps, eta);
        match greedy_extract(&set, &blocks, eps, eta) {
            Ok(out) => {
                let trace: Vec<_> = out.trace.iter().map(|s| (s.pivot_config, s.negated, s.block, s.kept)).collect();
                prop_assert_eq!(trace, oracle.trace.clone());
                prop_assert_eq!(&out.t_set, &oracle.t_set);
                prop_assert_eq!(&out.j_circ, &oracle.unused);
                prop_assert!(sparse_closeness_holds(&oracle, n, l, eps, eta));
                prop_assert!(out.trace.len() <= l);
                let floor = eta.powi(out.trace.len() as i32) * set.len() as f64;
                prop_assert!(out.t_set.len() as f64 >= floor);
            }
            Err(LabError::Certification(_)) => prop_assert!(!sparse_closeness_holds(&oracle, n, l, eps, eta)),
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }
}

#[test]
fn greedy_size_floor_on_full_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let blocks = BlockDecomposition::new(12, 3).unwrap();
    let mut full_loops = 0;
    for _ in 0..200 {
        // Clustered sets make every block retire.
        let centre: u64 = rng.random::<u64>() & full_mask(12);
        let set: Vec<Config> = (0..64)
            .map(|_| Config(centre ^ ((1u64 << rng.random_range(0..12)) * rng.random_range(0..2u64))))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let eta = 0.3;
        if let Ok(out) = greedy_extract(&set, &blocks, 0.25, eta) {
            if out.trace.len() == 3 {
                full_loops += 1;
            }
            assert!(out.t_set.len() as f64 >= eta.powi(out.trace.len() as i32) * set.len() as f64);
        }
    }
    assert!(full_loops > 0);
}

#[test]
fn block_path_telescopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let layouts = [(12, 3), (16, 4), (30, 5), (48, 6), (64, 8), (20, 1)];
    for i in 0..10_000 {
        let (n, l) = layouts[i % layouts.len()];
        let blocks = BlockDecomposition::new(n, l).unwrap();
        let sigma = Config(rng.random::<u64>() & full_mask(n));
        let xi = DisorderSpec::gaussian().sample_row(0, n, SeededStream::new(i as u64));
        let BlockPath { values } = block_path(sigma, &xi, &blocks).unwrap();
        assert_eq!(values.len(), l + 1);
        assert_eq!(values[0], 0.0);
        let direct = spins(sigma, n).iter().zip(&xi).map(|(s, x)| s * x).sum::<f64>() / (n as f64).sqrt();
        assert!((values[l] - direct).abs() <= 1e-12, "{} vs {direct}", values[l]);
    }
}

/// Straight-line replay of the interval filter.
fn chain_replay(family: &SeparatedFamily, xi: &[f64], (a, b): (f64, f64), r_bar: f64, nu: f64) -> Vec<Config> {
    let blocks = family.blocks();
    let (n, l, k) = (blocks.n(), blocks.l(), blocks.k());
    let gamma = family.gamma();
    let start = l - (l as f64 * gamma).round() as usize;
    let unit = (a.abs().max(b.abs()).max(r_bar) / gamma).sqrt() * (family.eps() * nu / l as f64).sqrt();
    let dist = |x: f64| (a - x).max(x - b).max(0.0);
    family
        .omega()
        .iter()
        .copied()
        .filter(|&s| {
            let sp = spins(s, n);
            (start..=l).all(|stage| {
                let m: f64 = (0..stage * k).map(|i| sp[i] * xi[i]).sum::<f64>() / (n as f64).sqrt();
                dist(m) <= (l - stage) as f64 * unit
            })
        })
        .collect()
}

#[test]
fn interval_chain_matches_replay() {
    let blocks = BlockDecomposition::new(8, 4).unwrap();
    let cube: Vec<Config> = (0..256).map(Config).collect();
    let wide = SeparatedFamily::new(cube, vec![], 0.25, 0.5, blocks.clone()).unwrap();
    let narrow = SeparatedFamily::new(
        vec![Config(0b0000_0000), Config(0b1010_1010)],
        vec![0, 1, 2, 3],
        0.25,
        0.5,
        blocks,
    )
    .unwrap();
    for seed in 0..20u64 {
        let xi = DisorderSpec::gaussian().sample_row(0, 8, SeededStream::new(seed));
        for target in [(0.2, 1.0), (-0.5, 0.5), (-2.0, -1.2)] {
            for family in [&wide, &narrow] {
                let got = interval_chain(family, &xi, target, 1.0, 1.0).unwrap();
                let replay = chain_replay(family, &xi, target, 1.0, 1.0);
                assert_eq!(got.survivors, replay, "seed {seed}, target {target:?}");
                assert_eq!(*got.sizes.last().unwrap(), replay.len());
                for s in &got.survivors {
                    let m = block_path(*s, &xi, family.blocks()).unwrap().values[4];
                    assert!(m >= target.0 - 1e-9 && m <= target.1 + 1e-9);
                }
            }
        }
    }
}

#[test]
fn pair_tail_examples() {
    let cube: Vec<Config> = (0..1024).map(Config).collect();
    let t = pair_overlap_tail(&cube, 10, 0.6, 0, SeededStream::new(0)).unwrap();
    assert_eq!(t.probability, 0.109375);
    let sigma = Config(0b1011);
    let pair = [sigma, sigma.negated(6)];
    assert_eq!(
        pair_overlap_tail(&pair, 6, 0.5, 0, SeededStream::new(0))
            .unwrap()
            .probability,
        1.0
    );
    assert!(pair_overlap_tail(&pair[..1], 6, 0.5, 0, SeededStream::new(0)).is_err());
}

#[test]
fn pair_tail_sampling_agrees_with_binomial() {
    let n = 21;
    let cube: Vec<Config> = (0..=full_mask(n)).map(Config).collect();
    let t = 7.0 / 21.0;
    let est = pair_overlap_tail(&cube, n, t, 200_000, SeededStream::new(4)).unwrap();
    let binom = |k: u64| (0..k).fold(1f64, |acc, i| acc * (n as u64 - i) as f64 / (i + 1) as f64);
    let exact: f64 = (0..=n as u64)
        .filter(|&d| (n as i64 - 2 * d as i64).abs() >= 7)
        .map(binom)
        .sum::<f64>()
        / 2f64.powi(n as i32);
    let se = est.se.expect("sampled estimate reports a standard error");
    assert!(
        (est.probability - exact).abs() <= 4.0 * se,
        "{} vs {exact}",
        est.probability
    );
}

#[test]
fn pairwise_separated_tuples_on_the_cube() {
    let cube: Vec<Config> = (0..4096).map(Config).collect();
    let blocks = BlockDecomposition::new(12, 3).unwrap();
    let mut successes = 0;
    for seed in 0..100u64 {
        if let Ok(tuple) = sample_pairwise_separated(&cube, 4, 0.25, &blocks, 2, 10, SeededStream::new(seed)) {
            successes += 1;
            assert_eq!(tuple.len(), 4);
            for (i, &a) in tuple.iter().enumerate() {
                for &b in &tuple[i + 1..] {
                    let (sa, sb) = (spins(a, 12), spins(b, 12));
                    let separated = (0..3).filter(|&j| block_overlap(&sa, &sb, j, 4).abs() <= 0.75).count();
                    assert!(separated >= 2);
                }
            }
        }
    }
    assert!(successes >= 99, "{successes}/100");
}

#[test]
fn decomposition_errors() {
    assert!(matches!(BlockDecomposition::new(10, 3), Err(LabError::Config(_))));
    assert!(BlockDecomposition::new(0, 1).is_err());
    let blocks = BlockDecomposition::new(4, 2).unwrap();
    assert!(SeparatedFamily::new(vec![Config(0), Config(0)], vec![0], 0.25, 0.5, blocks.clone()).is_err());
    assert!(SeparatedFamily::new(vec![Config(0), Config(0b11)], vec![0], 0.25, 0.5, blocks).is_err());
}
