use perceptron_lab::formulas::{chernoff_simplified, k2, log_delta_gap, psi2, rel_entropy, truncated_log};
use proptest::prelude::*;
use std::f64::consts::LN_2;

proptest! {
    #[test]
    fn k2_range_and_symmetry(t in -1.0f64..=1.0) {
        let v = k2(t).unwrap();
        prop_assert!((0.0..=LN_2).contains(&v));
        prop_assert!((v - k2(-t).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn k2_midpoint_convexity(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
        let mid = k2((a + b) / 2.0).unwrap();
        prop_assert!(mid <= (k2(a).unwrap() + k2(b).unwrap()) / 2.0 + 1e-12);
    }

    #[test]
    fn psi2_is_ln2_minus_k2(eps in 0.0f64..=2.0) {
        prop_assert!((psi2(eps).unwrap() - (LN_2 - k2(1.0 - eps).unwrap())).abs() <= 1e-15);
    }

    #[test]
    fn rel_entropy_nonnegative(a in 0.0f64..=1.0, p in 1e-6f64..(1.0 - 1e-6)) {
        prop_assert!(rel_entropy(a, p).unwrap() >= 0.0);
    }

    #[test]
    fn chernoff_lower_bound(p in 1e-4f64..0.5, frac in 0.0f64..=1.0) {
        let t = frac / p;
        let tp = t * p;
        prop_assume!(tp <= 1.0);
        let h = rel_entropy(tp, p).unwrap();
        prop_assert!(h >= chernoff_simplified(t, p).unwrap() - 1e-12);
    }

    #[test]
    fn truncated_log_monotone(z1 in -50.0f64..50.0, dz in 0.0f64..10.0, n in 1usize..40, d1 in 0.0f64..1.0, dd in 0.0f64..1.0) {
        prop_assert!(truncated_log(z1 + dz, n, d1) >= truncated_log(z1, n, d1));
        prop_assert!(truncated_log(z1, n, d1 + dd) >= truncated_log(z1, n, d1));
    }

    #[test]
    fn log_delta_bound_holds(x in 0.0f64..=1.0, r in 0.0f64..=1.0, gamma in -20.0f64..-1e-9) {
        let g = log_delta_gap(x, x * r, gamma).unwrap();
        prop_assert!(0.0 >= g.gap && g.gap >= g.lower);
    }
}

#[test]
fn endpoint_conventions() {
    assert_eq!(k2(1.0).unwrap(), LN_2);
    assert_eq!(k2(-1.0).unwrap(), LN_2);
    assert_eq!(rel_entropy(0.0, 0.5).unwrap(), LN_2);
    assert_eq!(truncated_log(f64::NEG_INFINITY, 10, 0.1), 1.0);
}

#[test]
fn domain_errors() {
    assert!(k2(1.5).is_err());
    assert!(psi2(-0.1).is_err());
    assert!(rel_entropy(0.3, 0.0).is_err());
    assert!(log_delta_gap(0.2, 0.5, -1.0).is_err());
    assert!(log_delta_gap(0.5, 0.2, 0.0).is_err());
}
