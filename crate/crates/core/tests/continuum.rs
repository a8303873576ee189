mod common;

use heavy_polymer::continuum::{
    continuum_hat_t, continuum_t, critical_point, estimate_beta_c, restrict_floor, restrict_top, sample_ppp,
    sample_w0_nested, w_beta, ContinuumVariant, CriticalKind, CriticalMc, PppSample, Truncation,
};
use heavy_polymer::elpp::WeightedPoint;
use proptest::prelude::*;

#[test]
fn sandwich_lower_bound_fails_above_one() {
    // one point off the axis: its chain pays x²/(2t), W_β only x²/(2βt)
    let s = PppSample {
        alpha: 1.0,
        q: 1.0,
        truncation: Truncation::Top { l: 1 },
        seed: 0,
        points: vec![WeightedPoint::new(1.0, 2.0, 3.0)],
    };
    let beta = 4.0;
    let lower = w_beta(&s, beta).unwrap().unwrap() - 1.0 / (2.0 * beta);
    let t1 = continuum_t(&s, 1.0, ContinuumVariant::Tilde { beta, at_least: 1 }).unwrap();
    assert!(lower > t1);
}

#[test]
fn floor_restriction_has_the_floor_law() {
    // counts above eps from a lower-floor sample are Poisson(q eps^-α)
    let (alpha, q) = (0.9, 2.0);
    let reps = 4000;
    let mut counts = Vec::new();
    for r in 0..reps {
        let s = sample_ppp(alpha, q, Truncation::Floor { eps: 0.05 }, r).unwrap();
        let t = restrict_floor(&s, 0.4).unwrap();
        assert!(t.points.iter().all(|p| p.w > 0.4));
        counts.push(t.points.len() as f64);
    }
    let mean = q * 0.4f64.powf(-alpha);
    let m = counts.iter().sum::<f64>() / reps as f64;
    assert!((m - mean).abs() < 4.0 * (mean / reps as f64).sqrt(), "{m} vs {mean}");
}

#[test]
fn top_and_floor_agree_in_law() {
    // the 3rd largest weight has the same law in both modes
    let (alpha, q) = (1.3, 1.0);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in 0..3000u64 {
        let t = sample_ppp(alpha, q, Truncation::Top { l: 3 }, r).unwrap();
        a.push(t.points[2].w);
        let f = sample_ppp(alpha, q, Truncation::Floor { eps: 0.05 }, 10_000 + r).unwrap();
        b.push(f.points.get(2).map_or(0.05, |p| p.w));
    }
    let d = heavy_polymer::stats::ks_two_sample(&a, &b);
    assert!(d < 1.73 * (2.0 / 3000.0f64).sqrt(), "KS {d}");
}

#[test]
fn critical_point_brackets_positivity() {
    let s = sample_ppp(1.2, 2.0, Truncation::Top { l: 16 }, 3).unwrap();
    let (b, clamped) = critical_point(CriticalKind::Tilde, &s).unwrap();
    assert!(!clamped);
    let at = |beta: f64| continuum_t(&s, 1.0, ContinuumVariant::Tilde { beta, at_least: 0 }).unwrap();
    assert!(at(b * 0.999) <= 0.0 && at(b * 1.001) > 0.0);
    let est = estimate_beta_c(
        0.3,
        CriticalKind::Hat,
        &CriticalMc { replicas: 10, l: 8, q: 1.0, seed: 4, bootstrap: 50 },
    )
    .unwrap();
    assert_eq!(est.thresholds.len(), 10);
    assert!(est.ci95.0 <= est.median && est.median <= est.ci95.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sandwich_chain(alpha in 0.55f64..1.95, beta in 0.05f64..=1.0, q in 0.5f64..4.0, l in 1usize..40, seed in any::<u64>()) {
        let s = sample_ppp(alpha, q, Truncation::Top { l }, seed).unwrap();
        let pen = 1.0 / (2.0 * beta);
        let lower = w_beta(&s, beta).unwrap().unwrap() - pen;
        let t1 = continuum_t(&s, 1.0, ContinuumVariant::Tilde { beta, at_least: 1 }).unwrap();
        let t0 = continuum_t(&s, 1.0, ContinuumVariant::Tilde { beta, at_least: 0 }).unwrap();
        let top = continuum_t(&s, 1.0, ContinuumVariant::T).unwrap();
        let ulp = |v: f64| 4.0 * f64::EPSILON * v.abs().max(1.0);
        prop_assert!(lower <= t1 + ulp(t1));
        prop_assert!(t1 <= t0);
        prop_assert!(t0 <= (top - pen).max(0.0) + ulp(top));
        prop_assert!(continuum_hat_t(&s, beta).unwrap() >= 0.0);
    }

    #[test]
    fn top_samples_are_prefix_nested(alpha in 0.2f64..1.9, q in 0.1f64..5.0, l in 1usize..30, extra in 0usize..30, seed in any::<u64>()) {
        let small = sample_ppp(alpha, q, Truncation::Top { l }, seed).unwrap();
        let big = sample_ppp(alpha, q, Truncation::Top { l: l + extra }, seed).unwrap();
        prop_assert_eq!(&small.points[..], &big.points[..l]);
        prop_assert_eq!(&restrict_top(&big, l).unwrap().points, &small.points);
        let t_small = continuum_t(&small, 1.0, ContinuumVariant::T).unwrap();
        let t_big = continuum_t(&big, 1.0, ContinuumVariant::T).unwrap();
        prop_assert!(t_small <= t_big);
    }

    #[test]
    fn w0_increases_as_floor_drops(alpha in 0.3f64..1.9, seed in any::<u64>()) {
        let v = sample_w0_nested(alpha, &[1.0, 0.3, 0.1], 4.0, seed).unwrap();
        prop_assert!(v[0] <= v[1] && v[1] <= v[2]);
    }

    #[test]
    fn tilde_monotone_in_beta(seed in any::<u64>(), b1 in 0.1f64..5.0, db in 0.0f64..5.0) {
        let s = sample_ppp(1.1, 2.0, Truncation::Top { l: 12 }, seed).unwrap();
        let a = continuum_t(&s, 1.0, ContinuumVariant::Tilde { beta: b1, at_least: 0 }).unwrap();
        let b = continuum_t(&s, 1.0, ContinuumVariant::Tilde { beta: b1 + db, at_least: 0 }).unwrap();
        prop_assert!(a <= b);
    }
}
