use perceptron_lab::cli::with_threads;
use perceptron_lab::formulas::all_fail_bound;
use perceptron_lab::verify::{all_fail_frequency, clt_gap, tail_addone, AddOneModel};
use perceptron_lab::{Activation, DisorderSpec, Enumerator, SeededStream};

fn addone_model() -> AddOneModel {
    AddOneModel {
        spec: DisorderSpec::gaussian(),
        activation: Activation::symmetric_interval(0.674490).unwrap(),
        n: 12,
        m: 5,
        delta: 0.1,
    }
}

#[test]
fn add_one_tail_is_nested_and_reproducible() {
    let w: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
    let e = Enumerator::default();
    let est = tail_addone(&addone_model(), &w, 150, SeededStream::new(21), &e).unwrap();
    assert!(est.replicates >= 150);
    assert!(est.p_hat.windows(2).all(|p| p[1] <= p[0]));
    assert!(est.hits.windows(2).all(|h| h[1] <= h[0]));
    for (p, (lo, hi)) in est.p_hat.iter().zip(&est.ci) {
        assert!(lo <= p && p <= hi);
    }
    assert!(est.hits.iter().all(|&h| h >= est.zero_ratio));
    let again = with_threads(3, || tail_addone(&addone_model(), &w, 150, SeededStream::new(21), &e))
        .unwrap()
        .unwrap();
    assert_eq!(est, again);
}

#[test]
fn add_one_rejects_small_runs() {
    let e = Enumerator::default();
    assert!(tail_addone(&addone_model(), &[0.0, 1.0], 99, SeededStream::new(0), &e).is_err());
}

#[test]
fn all_fail_frequency_respects_bound() {
    for &eps in &[0.25, 1.0] {
        for &n in &[16usize, 256] {
            let est = all_fail_frequency(eps, n, 4000, SeededStream::new(n as u64)).unwrap();
            let bound = all_fail_bound(eps, n).unwrap();
            assert_eq!(est.bound, bound.probability_bound);
            assert_eq!(est.threshold, bound.threshold);
            assert!(est.ci.0 <= est.p_hat && est.p_hat <= est.ci.1);
            assert!(est.p_hat <= est.bound + 3.0 * est.se, "{est:?}");
        }
    }
    assert!(all_fail_frequency(0.5, 1 << 15, 10, SeededStream::new(0)).is_err());
}

#[test]
fn clt_gap_decreases_with_dimension() {
    let f = Activation::half_space(0.0).unwrap();
    let spec = DisorderSpec::rademacher();
    let gaps: Vec<_> = [10usize, 40, 100]
        .iter()
        .map(|&n| clt_gap(&f, 1, n, &spec, 50_000, SeededStream::new(n as u64)).unwrap())
        .collect();
    assert!((gaps[0].value - 252.0 / 2048.0).abs() <= 4.0 * gaps[0].se);
    assert!(gaps.windows(2).all(|g| g[1].value <= g[0].value), "{gaps:?}");
    assert!(gaps.iter().all(|g| g.value >= 0.0));
}

#[test]
fn clt_gap_domain() {
    let f = Activation::half_space(0.0).unwrap();
    let spec = DisorderSpec::gaussian();
    assert!(clt_gap(&f, 0, 10, &spec, 100, SeededStream::new(0)).is_err());
    assert!(clt_gap(&f, 9, 10, &spec, 100, SeededStream::new(0)).is_err());
}
