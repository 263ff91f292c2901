mod common;

use chrono::Duration;
use informal_lob::adjust::{adjusted_chain, rescale_prices, run_price_adjustment, AdjustConfig, Noise, NoiseMode, Totals};
use informal_lob::ingest::{DayPartition, OrderRecord, Side};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn no_intervention_gives_unit_scale() {
    let days = common::random_days(41, 12, 80);
    for noise in [NoiseMode::Deterministic, NoiseMode::Stochastic] {
        let cfg = AdjustConfig {
            window: 5,
            extra_days: 4,
            noise,
            ..AdjustConfig::default()
        };
        let r = run_price_adjustment(&days, &cfg, None).unwrap();
        assert_eq!(r.series.days.len(), 16);
        assert!(r.series.days.iter().all(|d| d.scale == 1.0));
    }
}

#[test]
fn insertion_past_the_horizon_is_baseline() {
    let days = common::random_days(42, 8, 60);
    let cfg = AdjustConfig {
        window: 4,
        extra_days: 0,
        ..AdjustConfig::default()
    };
    let r = run_price_adjustment(&days, &cfg, Some(8)).unwrap();
    assert!(r.fills.is_empty());
    for (d, base) in r.series.days.iter().zip(&r.baseline_totals) {
        assert_eq!((d.s_hat, d.scale), (d.s, 1.0));
        assert_eq!((d.qb, d.qa), (base.bid, base.ask));
    }
}

/// Orders packed within a CUP of 190, far inside the maker's offsets.
fn tight_days(seed: u64, n: usize) -> Vec<DayPartition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id = 0;
    (0..n)
        .map(|d| {
            let start = common::at("2023-06-01T08:00:00Z") + Duration::days(d as i64);
            let orders = (0..80)
                .map(|i| {
                    let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
                    let price = 189.0 + rng.random_range(0..8) as f64 * 0.25;
                    id += 1;
                    OrderRecord::new(id, side, price, rng.random_range(5..60) as f64, start + Duration::minutes(i))
                })
                .collect();
            DayPartition {
                day: start.date_naive(),
                orders,
            }
        })
        .collect()
}

#[test]
fn uncrossed_quotes_keep_unit_scale() {
    let days = tight_days(3, 10);
    let cfg = AdjustConfig {
        window: 5,
        extra_days: 5,
        ..AdjustConfig::default()
    };
    let r = run_price_adjustment(&days, &cfg, Some(0)).unwrap();
    assert!(r.fills.is_empty());
    assert!(r.series.days.iter().all(|d| d.scale == 1.0));
}

/// Resting book around 190 plus aggressive sells that the maker's bid absorbs.
fn selling_days(seed: u64, n: usize) -> Vec<DayPartition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id = 0;
    (0..n)
        .map(|d| {
            let start = common::at("2023-07-01T08:00:00Z") + Duration::days(d as i64);
            let mut orders = Vec::new();
            for i in 0..120 {
                id += 1;
                let t = start + Duration::minutes(i * 5);
                let o = match i % 3 {
                    0 => OrderRecord::new(id, Side::Buy, 186.0 + rng.random_range(0..12) as f64 * 0.25, 60.0, t),
                    1 => OrderRecord::new(id, Side::Sell, 191.0 + rng.random_range(0..12) as f64 * 0.25, 60.0, t),
                    _ => OrderRecord::new(id, Side::Sell, 160.0, 40.0, t),
                };
                orders.push(o);
            }
            DayPartition {
                day: start.date_naive(),
                orders,
            }
        })
        .collect()
}

#[test]
fn absorbing_bid_lowers_price_when_xi_is_negative() {
    let days = selling_days(8, 10);
    let cfg = AdjustConfig {
        window: 5,
        extra_days: 5,
        xi: Some(-1e-4),
        ..AdjustConfig::default()
    };
    let r = run_price_adjustment(&days, &cfg, Some(0)).unwrap();
    assert!(!r.fills.is_empty());
    assert!(r.fills.iter().all(|f| f.side == Side::Buy));
    let below = r.series.days.iter().skip(1).filter(|d| d.s_hat < d.s).count();
    assert_eq!(below, r.series.days.len() - 1);
}

#[test]
fn absorbing_bid_raises_price_when_xi_is_positive() {
    let days = selling_days(8, 10);
    let cfg = AdjustConfig {
        window: 5,
        extra_days: 5,
        xi: Some(1e-4),
        ..AdjustConfig::default()
    };
    let r = run_price_adjustment(&days, &cfg, Some(0)).unwrap();
    assert!(r.series.days.iter().skip(1).all(|d| d.s_hat > d.s));
}

fn arb_totals(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..1e4, 0.0f64..1e4), n)
}

proptest! {
    #[test]
    fn chain_is_additive(
        base in arb_totals(20),
        mm in arb_totals(20),
        xi in prop::collection::vec(-1e-3f64..1e-3, 20),
        eps in prop::collection::vec(-1.0f64..1.0, 19),
    ) {
        let to = |v: &Vec<(f64, f64)>| v.iter().map(|&(bid, ask)| Totals { bid, ask }).collect::<Vec<_>>();
        let (b, m) = (to(&base), to(&mm));
        let s = adjusted_chain(190.0, &b, &m, &xi, Noise::Draws(&eps)).unwrap();
        let last = s.days.last().unwrap().s_hat;
        let sum: f64 = (0..19).map(|t| xi[t] * m[t].imbalance() + eps[t]).sum();
        prop_assert!((last - 190.0 - sum).abs() < 1e-9);
    }

    #[test]
    fn rescaling_keeps_relative_prices(
        prices in prop::collection::vec(100.0f64..300.0, 2..30),
        s in 150.0f64..250.0,
        s_hat in 150.0f64..250.0,
    ) {
        let t = common::at("2023-04-01T10:00:00Z");
        let orders: Vec<OrderRecord> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| OrderRecord::new(i as u64, Side::Buy, p, 10.0, t))
            .collect();
        let out = rescale_prices(&orders, s, s_hat).unwrap();
        prop_assert_eq!(out.len(), orders.len());
        for (a, b) in out.iter().zip(&orders) {
            prop_assert_eq!(a.volume, b.volume);
            prop_assert_eq!(a.side, b.side);
        }
        let r = out[0].price / out[1].price;
        prop_assert!((r - orders[0].price / orders[1].price).abs() < 1e-12);
    }
}
