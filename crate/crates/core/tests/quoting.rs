use informal_lob::quoting::{
    closed_form_deltas, defaults, quotes, solve_informal_deltas, QuoteParams, RESIDUAL_TOLERANCE,
};
use proptest::prelude::*;

/// Plain bisection on the offset equation written out directly.
fn bisect(skew: f64, gamma: f64, alpha: f64, k: f64) -> f64 {
    let g = |d: f64| d - skew - (1.0 / gamma) * (1.0 + gamma / (alpha * k * (k * d).exp())).ln();
    let (mut lo, mut hi) = (0.0, 50.0 / k);
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn reference(t: f64) -> QuoteParams {
    QuoteParams::informal(defaults::GAMMA, defaults::SIGMA, 3.0, defaults::ALPHA, defaults::K).at(t)
}

#[test]
fn reference_configuration_against_bisection() {
    for q in [-8.0, -1.0, 0.0, 2.0, 5.0] {
        for t in [0.0, 0.5, 0.9] {
            let p = reference(t);
            let r = solve_informal_deltas(q, &p).unwrap();
            let skew = p.skew(q);
            assert!((r.bid.delta - bisect(skew, p.gamma, defaults::ALPHA, defaults::K)).abs() < 1e-8);
            assert!((r.ask.delta - bisect(-skew, p.gamma, defaults::ALPHA, defaults::K)).abs() < 1e-8);
            assert!(r.bid.residual <= RESIDUAL_TOLERANCE && r.ask.residual <= RESIDUAL_TOLERANCE);
        }
    }
}

#[test]
fn informal_spread_exceeds_zero() {
    let q = quotes(190.0, 0.0, 0.0, &reference(0.0)).unwrap();
    assert!(q.ask - q.bid > 0.0);
    assert_eq!(q.r, 190.0);
}

proptest! {
    #[test]
    fn bid_offset_grows_with_inventory(q in -10.0f64..10.0, dq in 0.01f64..5.0, t in 0.0f64..0.99) {
        let p = reference(t);
        let a = solve_informal_deltas(q, &p).unwrap();
        let b = solve_informal_deltas(q + dq, &p).unwrap();
        prop_assert!(b.bid.delta >= a.bid.delta);
        prop_assert!(b.ask.delta <= a.ask.delta);
    }

    #[test]
    fn inventory_flip_swaps_offsets(q in -12.0f64..12.0, t in 0.0f64..1.0) {
        let p = reference(t);
        let up = solve_informal_deltas(q, &p).unwrap();
        let down = solve_informal_deltas(-q, &p).unwrap();
        prop_assert_eq!(up.bid.delta, down.ask.delta);
        prop_assert_eq!(up.ask.delta, down.bid.delta);
    }

    #[test]
    fn skew_vanishes_at_horizon(q in -50.0f64..50.0) {
        let p = reference(1.0);
        let r = solve_informal_deltas(q, &p).unwrap();
        prop_assert_eq!(r.bid.delta, r.ask.delta);
        let c = QuoteParams::classical(0.1, 2.38, 1.0, 1.5).at(1.0);
        let o = closed_form_deltas(q, &c).unwrap();
        prop_assert_eq!(o.delta_b, o.delta_a);
    }

    #[test]
    fn classical_spread_is_inventory_free(q in -50.0f64..50.0, gamma in 0.01f64..1.0, kappa in 0.1f64..5.0) {
        let p = QuoteParams::classical(gamma, 2.38, 1.0, kappa).at(0.2);
        let o = closed_form_deltas(q, &p).unwrap();
        let expected = 2.0 / gamma * (1.0 + gamma / kappa).ln();
        prop_assert!((o.spread() - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn residual_contract(gamma in 0.05f64..0.5, k in 0.2f64..1.0, alpha in 1e-5f64..1e-3, q in -3.0f64..3.0) {
        let p = QuoteParams::informal(gamma, 2.38, 1.0, alpha, k);
        let r = solve_informal_deltas(q, &p).unwrap();
        for root in [r.bid, r.ask] {
            prop_assert!(root.clamped || root.residual <= RESIDUAL_TOLERANCE);
            prop_assert!(root.delta >= 0.0);
        }
    }
}
