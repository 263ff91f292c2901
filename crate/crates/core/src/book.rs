//! Two-sided limit order book with price-time priority.
//!
//! Incoming orders walk the opposite side from the best price outward and
//! trade at the resting order's price. Whatever is left rests at the order's
//! own limit. Resting orders are cancelled once they have been on the book for
//! the expiry window (seven days by default, inclusive boundary); expiry is
//! evaluated lazily whenever the clock advances.

use std::collections::{BTreeMap, HashMap, VecDeque};

use chrono::{Duration, NaiveDate};
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DayPartition, OrderRecord, Side, Timestamp};

type Price = OrderedFloat<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("order {id} rejected: {reason}")]
    Invalid { id: u64, reason: &'static str },
    #[error("order {id} at {time} precedes the book clock {clock}")]
    OutOfOrder {
        id: u64,
        time: Timestamp,
        clock: Timestamp,
    },
    #[error("order id {0} is already resting on the book")]
    DuplicateId(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestingOrder {
    pub order_id: u64,
    pub side: Side,
    pub price: f64,
    pub remaining_volume: f64,
    pub entry_time: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub time: Timestamp,
    /// Price of the resting (maker) order.
    pub price: f64,
    pub volume: f64,
    pub aggressor: Side,
    pub maker_id: u64,
    pub taker_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthLevel {
    pub price: f64,
    /// Nonnegative offset from the same-side best price, CUP.
    pub distance: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub time: Option<Timestamp>,
    pub best_bid: Option<f64>,
    pub best_ask: Option<f64>,
    /// Absent whenever either side is empty.
    pub mid: Option<f64>,
    pub spread: Option<f64>,
    pub bids: Vec<DepthLevel>,
    pub asks: Vec<DepthLevel>,
    pub total_bid: f64,
    pub total_ask: f64,
}

impl BookSnapshot {
    pub fn depth(&self, side: Side) -> &[DepthLevel] {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    pub fn best(&self, side: Side) -> Option<f64> {
        match side {
            Side::Buy => self.best_bid,
            Side::Sell => self.best_ask,
        }
    }

    pub fn total(&self, side: Side) -> f64 {
        match side {
            Side::Buy => self.total_bid,
            Side::Sell => self.total_ask,
        }
    }

    pub fn imbalance(&self) -> f64 {
        self.total_bid - self.total_ask
    }
}

/// Offset of a resting price from the best price on its own side:
/// `b(t) - p` for bids, `p - a(t)` for asks. `None` when that side is empty.
pub fn distance_to_best(side: Side, price: f64, snap: &BookSnapshot) -> Option<f64> {
    match side {
        Side::Buy => snap.best_bid.map(|b| b - price),
        Side::Sell => snap.best_ask.map(|a| price - a),
    }
}

/// Running volume account. With every submission landing in exactly one
/// bucket, `submitted = 2 * executed + resting + expired + cancelled + rejected`
/// where `executed` counts each trade once (it consumes volume from both the
/// maker and the taker).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VolumeLedger {
    pub submitted: f64,
    pub executed: f64,
    pub expired: f64,
    pub cancelled: f64,
    pub rejected: f64,
}

impl VolumeLedger {
    /// Volume that should still be resting according to the ledger.
    pub fn implied_resting(&self) -> f64 {
        self.submitted - 2.0 * self.executed - self.expired - self.cancelled - self.rejected
    }

    pub fn delta_since(&self, earlier: &VolumeLedger) -> VolumeLedger {
        VolumeLedger {
            submitted: self.submitted - earlier.submitted,
            executed: self.executed - earlier.executed,
            expired: self.expired - earlier.expired,
            cancelled: self.cancelled - earlier.cancelled,
            rejected: self.rejected - earlier.rejected,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubmitOutcome {
    pub executions: Vec<Execution>,
    pub rested: Option<RestingOrder>,
    /// Orders removed by the expiry sweep that ran before matching.
    pub expired: Vec<RestingOrder>,
}

#[derive(Debug, Clone)]
pub struct Book {
    bids: BTreeMap<Price, VecDeque<RestingOrder>>,
    asks: BTreeMap<Price, VecDeque<RestingOrder>>,
    clock: Option<Timestamp>,
    expiry_window: Duration,
    // (entry_time, id) in insertion order; entry times never decrease.
    expiry_queue: VecDeque<(Timestamp, u64)>,
    live: HashMap<u64, (Side, Price)>,
    ledger: VolumeLedger,
}

impl Default for Book {
    fn default() -> Self {
        Self::new()
    }
}

pub const DEFAULT_EXPIRY_DAYS: i64 = 7;

impl Book {
    pub fn new() -> Self {
        Self::with_expiry(Duration::days(DEFAULT_EXPIRY_DAYS))
    }

    pub fn with_expiry(expiry_window: Duration) -> Self {
        Self {
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            clock: None,
            expiry_window,
            expiry_queue: VecDeque::new(),
            live: HashMap::new(),
            ledger: VolumeLedger::default(),
        }
    }

    pub fn clock(&self) -> Option<Timestamp> {
        self.clock
    }

    pub fn expiry_window(&self) -> Duration {
        self.expiry_window
    }

    pub fn ledger(&self) -> VolumeLedger {
        self.ledger
    }

    pub fn best_bid(&self) -> Option<f64> {
        self.bids.keys().next_back().map(|p| p.0)
    }

    pub fn best_ask(&self) -> Option<f64> {
        self.asks.keys().next().map(|p| p.0)
    }

    pub fn mid(&self) -> Option<f64> {
        Some(0.5 * (self.best_ask()? + self.best_bid()?))
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn contains(&self, order_id: u64) -> bool {
        self.live.contains_key(&order_id)
    }

    pub fn resting_volume(&self) -> f64 {
        self.side_total(Side::Buy) + self.side_total(Side::Sell)
    }

    fn levels(&self, side: Side) -> &BTreeMap<Price, VecDeque<RestingOrder>> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn levels_mut(&mut self, side: Side) -> &mut BTreeMap<Price, VecDeque<RestingOrder>> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    fn side_total(&self, side: Side) -> f64 {
        self.levels(side)
            .values()
            .flat_map(|q| q.iter())
            .map(|o| o.remaining_volume)
            .sum()
    }

    /// Resting orders of one side, best price first, FIFO within a level.
    pub fn resting(&self, side: Side) -> Vec<RestingOrder> {
        let levels = self.levels(side);
        let iter: Box<dyn Iterator<Item = &VecDeque<RestingOrder>>> = match side {
            Side::Buy => Box::new(levels.values().rev()),
            Side::Sell => Box::new(levels.values()),
        };
        iter.flat_map(|q| q.iter().cloned()).collect()
    }

    /// Removes every order that has rested for at least the expiry window and
    /// advances the clock to `now`.
    pub fn expire(&mut self, now: Timestamp) -> Vec<RestingOrder> {
        let mut removed = Vec::new();
        while let Some(&(entry, id)) = self.expiry_queue.front() {
            if entry + self.expiry_window > now {
                break;
            }
            self.expiry_queue.pop_front();
            if let Some(order) = self.remove_live(id) {
                self.ledger.expired += order.remaining_volume;
                removed.push(order);
            }
        }
        if self.clock.is_none_or(|c| now > c) {
            self.clock = Some(now);
        }
        removed
    }

    /// Pulls a resting order off the book.
    pub fn cancel(&mut self, order_id: u64) -> Option<RestingOrder> {
        let order = self.remove_live(order_id)?;
        self.ledger.cancelled += order.remaining_volume;
        Some(order)
    }

    fn remove_live(&mut self, order_id: u64) -> Option<RestingOrder> {
        let (side, price) = self.live.remove(&order_id)?;
        let levels = self.levels_mut(side);
        let queue = levels.get_mut(&price)?;
        let pos = queue.iter().position(|o| o.order_id == order_id)?;
        let order = queue.remove(pos);
        if queue.is_empty() {
            levels.remove(&price);
        }
        order
    }

    fn reject(&mut self, order: &OrderRecord, err: EngineError) -> Result<SubmitOutcome, EngineError> {
        let volume = if order.volume.is_finite() { order.volume.max(0.0) } else { 0.0 };
        self.ledger.submitted += volume;
        self.ledger.rejected += volume;
        Err(err)
    }

    /// Matches `order` against the book and rests any remainder.
    ///
    /// Invalid orders are rejected without touching the book (their volume
    /// is recorded in the ledger's `rejected` bucket).
    pub fn submit(&mut self, order: &OrderRecord) -> Result<SubmitOutcome, EngineError> {
        let invalid = |reason| EngineError::Invalid {
            id: order.id,
            reason,
        };
        if !(order.price.is_finite() && order.price > 0.0) {
            return self.reject(order, invalid("nonpositive price"));
        }
        if !(order.volume.is_finite() && order.volume > 0.0) {
            return self.reject(order, invalid("nonpositive volume"));
        }
        if let Some(clock) = self.clock {
            if order.timestamp < clock {
                return self.reject(
                    order,
                    EngineError::OutOfOrder {
                        id: order.id,
                        time: order.timestamp,
                        clock,
                    },
                );
            }
        }
        if self.live.contains_key(&order.id) {
            return self.reject(order, EngineError::DuplicateId(order.id));
        }

        let expired = self.expire(order.timestamp);
        self.ledger.submitted += order.volume;

        let mut remaining = order.volume;
        let mut executions = Vec::new();
        let opposite = order.side.opposite();
        while remaining > 0.0 {
            let best = match opposite {
                Side::Sell => self.asks.first_key_value().map(|(p, _)| *p),
                Side::Buy => self.bids.last_key_value().map(|(p, _)| *p),
            };
            let Some(level_price) = best else { break };
            let crosses = match order.side {
                Side::Buy => level_price.0 <= order.price,
                Side::Sell => level_price.0 >= order.price,
            };
            if !crosses {
                break;
            }
            let levels = match opposite {
                Side::Buy => &mut self.bids,
                Side::Sell => &mut self.asks,
            };
            let queue = levels.get_mut(&level_price).expect("best level exists");
            while remaining > 0.0 {
                let Some(maker) = queue.front_mut() else { break };
                let fill = remaining.min(maker.remaining_volume);
                executions.push(Execution {
                    time: order.timestamp,
                    price: maker.price,
                    volume: fill,
                    aggressor: order.side,
                    maker_id: maker.order_id,
                    taker_id: order.id,
                });
                self.ledger.executed += fill;
                remaining -= fill;
                if fill >= maker.remaining_volume {
                    let done = queue.pop_front().expect("front exists");
                    self.live.remove(&done.order_id);
                } else {
                    maker.remaining_volume -= fill;
                }
            }
            if queue.is_empty() {
                levels.remove(&level_price);
            }
        }

        let rested = (remaining > 0.0).then(|| {
            let resting = RestingOrder {
                order_id: order.id,
                side: order.side,
                price: order.price,
                remaining_volume: remaining,
                entry_time: order.timestamp,
            };
            let key = OrderedFloat(order.price);
            self.levels_mut(order.side)
                .entry(key)
                .or_default()
                .push_back(resting.clone());
            self.live.insert(order.id, (order.side, key));
            self.expiry_queue.push_back((order.timestamp, order.id));
            resting
        });

        Ok(SubmitOutcome {
            executions,
            rested,
            expired,
        })
    }

    pub fn snapshot(&self) -> BookSnapshot {
        let depth = |side: Side| -> Vec<DepthLevel> {
            let levels = self.levels(side);
            let iter: Box<dyn Iterator<Item = (&Price, &VecDeque<RestingOrder>)>> = match side {
                Side::Buy => Box::new(levels.iter().rev()),
                Side::Sell => Box::new(levels.iter()),
            };
            let mut best = None;
            iter.map(|(p, q)| {
                let best = *best.get_or_insert(p.0);
                DepthLevel {
                    price: p.0,
                    distance: match side {
                        Side::Buy => best - p.0,
                        Side::Sell => p.0 - best,
                    },
                    volume: q.iter().map(|o| o.remaining_volume).sum(),
                }
            })
            .collect()
        };
        let bids = depth(Side::Buy);
        let asks = depth(Side::Sell);
        let best_bid = self.best_bid();
        let best_ask = self.best_ask();
        let (mid, spread) = match (best_bid, best_ask) {
            (Some(b), Some(a)) => (Some(0.5 * (a + b)), Some(a - b)),
            _ => (None, None),
        };
        BookSnapshot {
            time: self.clock,
            best_bid,
            best_ask,
            mid,
            spread,
            total_bid: bids.iter().map(|l| l.volume).sum(),
            total_ask: asks.iter().map(|l| l.volume).sum(),
            bids,
            asks,
        }
    }
}

/// A limit order that joined the book, with its distance to the best price
/// right after it was placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub order_id: u64,
    pub side: Side,
    pub price: f64,
    pub volume: f64,
    /// Index into the day's snapshots.
    pub event: usize,
    pub distance: f64,
}

/// Everything observed while replaying one day of order flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReplay {
    pub day: NaiveDate,
    pub submitted_volume: f64,
    pub executions: Vec<Execution>,
    /// Index of the day's order that triggered each execution.
    pub execution_events: Vec<usize>,
    /// One snapshot after each order of the day (rejected orders included).
    pub snapshots: Vec<BookSnapshot>,
    pub placements: Vec<Placement>,
    pub expired: Vec<RestingOrder>,
    pub rejected: Vec<(u64, String)>,
    /// Ledger movement over the day.
    pub ledger: VolumeLedger,
    pub close: BookSnapshot,
}

impl DayReplay {
    pub fn executed_volume(&self) -> f64 {
        self.executions.iter().map(|e| e.volume).sum()
    }

    /// Last defined mid of the day.
    pub fn closing_mid(&self) -> Option<f64> {
        self.snapshots.iter().rev().find_map(|s| s.mid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub days: Vec<DayReplay>,
    pub ledger: VolumeLedger,
    pub final_book: BookSnapshot,
    pub resting_volume: f64,
}

/// Aggregated immediate execution of one incoming order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOrder {
    pub taker_id: u64,
    pub time: Timestamp,
    pub side: Side,
    pub volume: f64,
    /// Global event index: `mids[event]` is the mid just before the order.
    pub event: usize,
}

impl Replay {
    /// Mid before each event, plus the mid after the last one.
    pub fn mid_series(&self) -> Vec<Option<f64>> {
        let mut mids = vec![None];
        for d in &self.days {
            mids.extend(d.snapshots.iter().map(|s| s.mid));
        }
        mids
    }

    pub fn executions(&self) -> impl Iterator<Item = &Execution> {
        self.days.iter().flat_map(|d| d.executions.iter())
    }

    /// Groups executions by taker, in event order.
    pub fn market_orders(&self) -> Vec<MarketOrder> {
        let mut out = Vec::new();
        let mut offset = 0usize;
        for d in &self.days {
            out.extend(market_orders(d, offset));
            offset += d.snapshots.len();
        }
        out
    }
}

/// Market orders of a single day; `offset` is the global index of the day's
/// first event.
pub fn market_orders(day: &DayReplay, offset: usize) -> Vec<MarketOrder> {
    let mut out: Vec<MarketOrder> = Vec::new();
    for (e, &event) in day.executions.iter().zip(&day.execution_events) {
        let event = offset + event;
        match out.last_mut() {
            Some(last) if last.event == event => last.volume += e.volume,
            _ => out.push(MarketOrder {
                taker_id: e.taker_id,
                time: e.time,
                side: e.aggressor,
                volume: e.volume,
                event,
            }),
        }
    }
    out
}

/// Replays consecutive days through one persistent book (resting orders carry
/// over until they expire), snapshotting after every order.
pub fn replay(days: &[DayPartition], expiry_window: Duration) -> Replay {
    let mut book = Book::with_expiry(expiry_window);
    let mut out = Vec::with_capacity(days.len());
    for part in days {
        out.push(replay_day(&mut book, part));
    }
    let ledger = book.ledger();
    Replay {
        days: out,
        ledger,
        final_book: book.snapshot(),
        resting_volume: book.resting_volume(),
    }
}

pub fn replay_day(book: &mut Book, part: &DayPartition) -> DayReplay {
    let start = book.ledger();
    let mut executions = Vec::new();
    let mut snapshots = Vec::with_capacity(part.orders.len());
    let mut placements = Vec::new();
    let mut expired = Vec::new();
    let mut rejected = Vec::new();
    let mut execution_events = Vec::new();
    for (i, order) in part.orders.iter().enumerate() {
        match book.submit(order) {
            Ok(outcome) => {
                execution_events.extend(std::iter::repeat_n(i, outcome.executions.len()));
                executions.extend(outcome.executions);
                expired.extend(outcome.expired);
                let snap = book.snapshot();
                if let Some(r) = outcome.rested {
                    let distance = distance_to_best(r.side, r.price, &snap).unwrap_or(0.0);
                    placements.push(Placement {
                        order_id: r.order_id,
                        side: r.side,
                        price: r.price,
                        volume: r.remaining_volume,
                        event: i,
                        distance,
                    });
                }
                snapshots.push(snap);
            }
            Err(e) => {
                rejected.push((order.id, e.to_string()));
                snapshots.push(book.snapshot());
            }
        }
    }
    let close = book.snapshot();
    DayReplay {
        day: part.day,
        submitted_volume: part.submitted_volume(),
        executions,
        execution_events,
        snapshots,
        placements,
        expired,
        rejected,
        ledger: book.ledger().delta_since(&start),
        close,
    }
}
