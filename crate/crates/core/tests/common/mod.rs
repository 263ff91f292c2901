#![allow(dead_code)]

use chrono::Duration;
use informal_lob::book::{Execution, RestingOrder};
use informal_lob::ingest::{parse_timestamp, DayPartition, OrderRecord, Side, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn at(s: &str) -> Timestamp {
    parse_timestamp(s).unwrap()
}

struct Resting {
    order: RestingOrder,
    seq: u64,
}

/// Brute-force price-time matcher: every step scans the whole book.
pub struct NaiveBook {
    resting: Vec<Resting>,
    clock: Option<Timestamp>,
    window: Duration,
    seq: u64,
    pub executions: Vec<Execution>,
    pub expired: f64,
    pub rejected: f64,
}

impl NaiveBook {
    pub fn new(window: Duration) -> Self {
        Self {
            resting: Vec::new(),
            clock: None,
            window,
            seq: 0,
            executions: Vec::new(),
            expired: 0.0,
            rejected: 0.0,
        }
    }

    pub fn submit(&mut self, o: &OrderRecord) {
        let valid = o.price.is_finite()
            && o.price > 0.0
            && o.volume.is_finite()
            && o.volume > 0.0
            && self.clock.is_none_or(|c| o.timestamp >= c)
            && !self.resting.iter().any(|r| r.order.order_id == o.id);
        if !valid {
            if o.volume.is_finite() {
                self.rejected += o.volume.max(0.0);
            }
            return;
        }
        self.clock = Some(o.timestamp);
        let window = self.window;
        let mut kept = Vec::new();
        for r in self.resting.drain(..) {
            if r.order.entry_time + window <= o.timestamp {
                self.expired += r.order.remaining_volume;
            } else {
                kept.push(r);
            }
        }
        self.resting = kept;

        let mut remaining = o.volume;
        while remaining > 0.0 {
            let mut best: Option<usize> = None;
            for (i, r) in self.resting.iter().enumerate() {
                if r.order.side == o.side {
                    continue;
                }
                let crosses = match o.side {
                    Side::Buy => r.order.price <= o.price,
                    Side::Sell => r.order.price >= o.price,
                };
                if !crosses {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(j) => {
                        let b = &self.resting[j];
                        let improves = match o.side {
                            Side::Buy => r.order.price < b.order.price,
                            Side::Sell => r.order.price > b.order.price,
                        };
                        improves || (r.order.price == b.order.price && r.seq < b.seq)
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            let maker = &mut self.resting[i].order;
            let fill = remaining.min(maker.remaining_volume);
            self.executions.push(Execution {
                time: o.timestamp,
                price: maker.price,
                volume: fill,
                aggressor: o.side,
                maker_id: maker.order_id,
                taker_id: o.id,
            });
            remaining -= fill;
            maker.remaining_volume -= fill;
            if maker.remaining_volume <= 0.0 {
                self.resting.remove(i);
            }
        }
        if remaining > 0.0 {
            self.resting.push(Resting {
                order: RestingOrder {
                    order_id: o.id,
                    side: o.side,
                    price: o.price,
                    remaining_volume: remaining,
                    entry_time: o.timestamp,
                },
                seq: self.seq,
            });
            self.seq += 1;
        }
    }

    /// Best price first, arrival order within a price.
    pub fn resting(&self, side: Side) -> Vec<RestingOrder> {
        let mut v: Vec<&Resting> = self.resting.iter().filter(|r| r.order.side == side).collect();
        v.sort_by(|a, b| {
            let by_price = match side {
                Side::Buy => b.order.price.total_cmp(&a.order.price),
                Side::Sell => a.order.price.total_cmp(&b.order.price),
            };
            by_price.then(a.seq.cmp(&b.seq))
        });
        v.into_iter().map(|r| r.order.clone()).collect()
    }

    pub fn resting_volume(&self) -> f64 {
        self.resting.iter().map(|r| r.order.remaining_volume).sum()
    }
}

/// Random flow around `mid` on a quarter-CUP grid with integer volumes.
/// Timestamps never decrease and repeat now and then; a small share of
/// orders carries a nonpositive volume.
pub fn random_flow(seed: u64, n: usize, start: &str, mean_gap_secs: i64) -> Vec<OrderRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = at(start);
    (0..n)
        .map(|i| {
            if rng.random_bool(0.9) {
                t += Duration::seconds(rng.random_range(0..=2 * mean_gap_secs));
            }
            let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
            let offset = (rng.random_range(-24i32..=24) as f64) * 0.25;
            let lean = match side {
                Side::Buy => -1.0,
                Side::Sell => 1.0,
            };
            let price = 190.0 + lean + offset;
            let volume = if rng.random_bool(0.01) {
                -(rng.random_range(0..50) as f64)
            } else {
                rng.random_range(1..=500) as f64
            };
            OrderRecord::new(i as u64, side, price, volume, t)
        })
        .collect()
}

/// `n_days` consecutive days with `per_day` orders each, ids unique.
pub fn random_days(seed: u64, n_days: usize, per_day: usize) -> Vec<DayPartition> {
    let flow = random_flow(seed, n_days * per_day, "2023-03-01T06:00:00Z", 0);
    let base = at("2023-03-01T06:00:00Z");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut days = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let day_start = base + Duration::days(d as i64);
        let mut offsets: Vec<i64> = (0..per_day).map(|_| rng.random_range(0..14 * 3600)).collect();
        offsets.sort_unstable();
        let orders = flow[d * per_day..(d + 1) * per_day]
            .iter()
            .zip(offsets)
            .map(|(o, off)| OrderRecord {
                timestamp: day_start + Duration::seconds(off),
                volume: o.volume.abs().max(1.0),
                ..o.clone()
            })
            .collect();
        days.push(DayPartition {
            day: day_start.date_naive(),
            orders,
        });
    }
    days
}
