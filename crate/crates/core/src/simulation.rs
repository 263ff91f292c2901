//! Single market maker over replayed order flow.
//!
//! The simulation replays the same days twice: once untouched (the
//! baseline) and once with the market maker quoting around the public mid.
//! In the second run the maker's quotes are posted to the book as ordinary
//! resting orders, so the comparison of execution ratios and spreads covers
//! the whole market.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{replay, Book, Execution};
use crate::ingest::{DayPartition, OrderRecord, Side, Timestamp};
use crate::quoting::{self, defaults, intensity, Intensity, QuotePair, QuoteParams, SolverSettings};
use crate::stats::{daily_stats, DailyStats};

/// Maker id used for fills taken directly from incoming flow.
pub const MM_ORDER_ID: u64 = u64::MAX;
/// First id of the maker's resting quotes in the with-MM book.
pub const MM_ID_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("need at least {needed} mid observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MMState {
    /// CUP.
    pub cash: f64,
    /// Signed lots, `bought - sold` plus any starting inventory.
    pub inventory: f64,
    /// Cumulative lots bought.
    pub bought: f64,
    /// Cumulative lots sold.
    pub sold: f64,
}

impl MMState {
    pub fn new(cash: f64, inventory: f64) -> Self {
        Self {
            cash,
            inventory,
            bought: 0.0,
            sold: 0.0,
        }
    }

    /// Applies a fill of `usd` dollars at `price` on the maker's `side`.
    pub fn apply(&mut self, side: Side, price: f64, usd: f64, lot_size: f64) {
        let lots = usd / lot_size;
        match side {
            Side::Buy => {
                self.cash -= price * usd;
                self.inventory += lots;
                self.bought += lots;
            }
            Side::Sell => {
                self.cash += price * usd;
                self.inventory -= lots;
                self.sold += lots;
            }
        }
    }

    pub fn wealth(&self, mid: f64, lot_size: f64) -> f64 {
        self.cash + self.inventory * lot_size * mid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SigmaMode {
    /// A given value, CUP per sqrt(day).
    Constant { sigma: f64 },
    /// One estimate over the whole horizon.
    Fixed,
    /// Trailing-window estimate refreshed every `window_days`.
    Rolling { window_days: usize },
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::Constant {
            sigma: defaults::SIGMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    Poisson,
    #[default]
    FlowCross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub c0: f64,
    /// Lots.
    pub q0: f64,
    pub gamma: f64,
    pub intensity: Intensity,
    pub sigma_mode: SigmaMode,
    pub fill_mode: FillMode,
    /// Poisson step, days.
    pub dt: f64,
    /// USD per side per refresh.
    pub quote_size: f64,
    /// USD per inventory lot.
    pub lot_size: f64,
    pub expiry_days: i64,
    pub legacy_spread: bool,
    pub solver: SolverSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            c0: defaults::INITIAL_CASH,
            q0: defaults::INITIAL_INVENTORY,
            gamma: defaults::GAMMA,
            intensity: Intensity::Informal {
                lambda: 1.0,
                alpha: defaults::ALPHA,
                k: defaults::K,
            },
            sigma_mode: SigmaMode::default(),
            fill_mode: FillMode::default(),
            dt: 1.0 / 96.0,
            quote_size: 100.0,
            lot_size: 100.0,
            expiry_days: crate::book::DEFAULT_EXPIRY_DAYS,
            legacy_spread: false,
            solver: SolverSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !self.c0.is_finite() || !self.q0.is_finite() {
            return bad("c0 and q0 must be finite".into());
        }
        if !(self.quote_size > 0.0 && self.quote_size.is_finite()) {
            return bad(format!("quote_size must be positive, got {}", self.quote_size));
        }
        if !(self.lot_size > 0.0 && self.lot_size.is_finite()) {
            return bad(format!("lot_size must be positive, got {}", self.lot_size));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad(format!("dt must lie in (0, 1], got {}", self.dt));
        }
        if self.expiry_days < 1 {
            return bad(format!("expiry_days must be at least 1, got {}", self.expiry_days));
        }
        match self.sigma_mode {
            SigmaMode::Rolling { window_days: 0 } => return bad("window_days must be at least 1".into()),
            SigmaMode::Constant { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return bad(format!("sigma must be nonnegative, got {sigma}"))
            }
            _ => {}
        }
        self.quote_params(0.0)
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))
    }

    /// Quote parameters for one trading day (`T = 1`).
    pub fn quote_params(&self, sigma: f64) -> QuoteParams {
        QuoteParams {
            legacy_spread: self.legacy_spread,
            solver: self.solver,
            ..QuoteParams::new(self.gamma, sigma, self.intensity)
        }
    }

    /// Whole lots the maker may trade per side in one Poisson step.
    pub fn lots_per_refresh(&self) -> f64 {
        self.quote_size / self.lot_size
    }
}

/// Per-day volatility used for quoting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub values: Vec<f64>,
    /// Day indices at which a new estimate took effect.
    pub refreshes: Vec<usize>,
}

fn population_std(changes: &[f64]) -> f64 {
    let n = changes.len() as f64;
    let mean = changes.iter().sum::<f64>() / n;
    (changes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Volatility of daily mid changes, one value per day of `daily_mids`.
///
/// Rolling mode refreshes on days `0, w, 2w, ...`; the first block uses the
/// first window of changes and later blocks the `w` changes observed before
/// the refresh day.
pub fn estimate_sigma(daily_mids: &[f64], mode: SigmaMode) -> Result<SigmaSchedule, SimError> {
    let n = daily_mids.len();
    if let SigmaMode::Constant { sigma } = mode {
        return Ok(SigmaSchedule {
            values: vec![sigma; n],
            refreshes: if n > 0 { vec![0] } else { vec![] },
        });
    }
    if n < 2 {
        return Err(SimError::InsufficientData { needed: 2, got: n });
    }
    let changes: Vec<f64> = daily_mids.windows(2).map(|w| w[1] - w[0]).collect();
    match mode {
        SigmaMode::Fixed => Ok(SigmaSchedule {
            values: vec![population_std(&changes); n],
            refreshes: vec![0],
        }),
        SigmaMode::Rolling { window_days: w } => {
            if w == 0 {
                return Err(SimError::Config("window_days must be at least 1".into()));
            }
            let mut values = Vec::with_capacity(n);
            let mut refreshes = Vec::new();
            let mut current = population_std(&changes[..w.min(changes.len())]);
            for d in 0..n {
                if d % w == 0 {
                    if d > 0 {
                        // changes known before day d: indices 0..d-1
                        let known = &changes[..d - 1];
                        if !known.is_empty() {
                            current = population_std(&known[known.len().saturating_sub(w)..]);
                        }
                    }
                    refreshes.push(d);
                }
                values.push(current);
            }
            Ok(SigmaSchedule { values, refreshes })
        }
        SigmaMode::Constant { .. } => unreachable!(),
    }
}

/// Fill counts drawn in one Poisson step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoissonFills {
    pub bid: u64,
    pub ask: u64,
}

fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    match Poisson::new(rate) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// Draws bid and ask fills from `Poisson(lambda * dt)`, capped at the lots
/// quoted per refresh, and books them at the quoted prices.
#[allow(clippy::too_many_arguments)]
pub fn step_poisson<R: Rng + ?Sized>(
    state: MMState,
    quotes: &QuotePair,
    lambda_b: f64,
    lambda_a: f64,
    dt: f64,
    config: &SimConfig,
    rng: &mut R,
) -> (MMState, PoissonFills) {
    let cap = config.lots_per_refresh().floor() as u64;
    let fills = PoissonFills {
        bid: poisson_draw(lambda_b * dt, rng).min(cap),
        ask: poisson_draw(lambda_a * dt, rng).min(cap),
    };
    let mut next = state;
    if fills.bid > 0 {
        next.apply(Side::Buy, quotes.bid, fills.bid as f64 * config.lot_size, config.lot_size);
    }
    if fills.ask > 0 {
        next.apply(Side::Sell, quotes.ask, fills.ask as f64 * config.lot_size, config.lot_size);
    }
    (next, fills)
}

/// USD the maker still offers on each side in the current refresh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteCapacity {
    pub bid: f64,
    pub ask: f64,
}

impl QuoteCapacity {
    pub fn full(quote_size: f64) -> Self {
        Self {
            bid: quote_size,
            ask: quote_size,
        }
    }
}

/// Lets the maker take an incoming order that strictly crosses its quote.
///
/// A sell priced below the bid is bought at the bid; a buy priced above the
/// ask is sold at the ask. The fill is capped by the remaining capacity and
/// the execution lists the incoming order as taker.
pub fn step_flow_cross(
    state: MMState,
    quotes: &QuotePair,
    capacity: &mut QuoteCapacity,
    incoming: &OrderRecord,
    lot_size: f64,
) -> (MMState, Option<Execution>) {
    let (mm_side, price, room) = match incoming.side {
        Side::Sell if incoming.price < quotes.bid => (Side::Buy, quotes.bid, &mut capacity.bid),
        Side::Buy if incoming.price > quotes.ask => (Side::Sell, quotes.ask, &mut capacity.ask),
        _ => return (state, None),
    };
    let volume = incoming.volume.min(*room);
    if !(volume > 0.0) {
        return (state, None);
    }
    *room -= volume;
    let mut next = state;
    next.apply(mm_side, price, volume, lot_size);
    let exec = Execution {
        time: incoming.timestamp,
        price,
        volume,
        aggressor: incoming.side,
        maker_id: MM_ORDER_ID,
        taker_id: incoming.id,
    };
    (next, Some(exec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillSource {
    /// Incoming order crossed the maker's quote.
    Intercept,
    /// Public order matched a quote resting in the book.
    Book,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MMFill {
    pub day: NaiveDate,
    pub time: Timestamp,
    /// The maker's side: `Buy` means the maker bought USD.
    pub side: Side,
    pub price: f64,
    /// USD.
    pub volume: f64,
    pub source: FillSource,
    pub cash: f64,
    pub inventory: f64,
}

/// State after each incoming order of the with-MM run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub day: NaiveDate,
    pub time: Timestamp,
    /// Fraction of the trading day.
    pub t: f64,
    pub mid: Option<f64>,
    pub sigma: f64,
    pub reservation: Option<f64>,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub cash: f64,
    pub inventory: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayQuality {
    pub day: NaiveDate,
    pub baseline_execution_ratio: Option<f64>,
    pub mm_execution_ratio: Option<f64>,
    pub baseline_mean_relative_spread: Option<f64>,
    pub mm_mean_relative_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub final_cash: f64,
    pub final_inventory: f64,
    /// Last mid seen by the maker.
    pub final_mid: Option<f64>,
    /// `final_cash + inventory * lot_size * final_mid`; the inventory is left
    /// unmarked if no mid was ever observed.
    pub final_wealth: f64,
    pub sigma: SigmaSchedule,
    pub steps: Vec<SimStep>,
    pub fills: Vec<MMFill>,
    pub quality: Vec<DayQuality>,
    pub baseline: Vec<DailyStats>,
    pub skipped_quotes: usize,
}

/// Closing mid of every day, forward filled; leading gaps take the first
/// observed mid. Empty when no day ever has a mid.
pub fn daily_closing_mids(closing: &[Option<f64>]) -> Vec<f64> {
    let Some(first) = closing.iter().flatten().next().copied() else {
        return Vec::new();
    };
    let mut last = first;
    closing
        .iter()
        .map(|m| {
            if let Some(m) = m {
                last = *m;
            }
            last
        })
        .collect()
}

fn day_fraction(part: &DayPartition, time: Timestamp) -> f64 {
    let midnight = part.day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    ((time - midnight).num_milliseconds() as f64 / 86_400_000.0).clamp(0.0, 1.0)
}

fn mean<I: Iterator<Item = f64>>(values: I) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct WithMM<'a> {
    config: &'a SimConfig,
    book: Book,
    state: MMState,
    live: Vec<u64>,
    next_id: u64,
    last_mid: Option<f64>,
    fills: Vec<MMFill>,
    skipped: usize,
}

impl WithMM<'_> {
    fn record(&mut self, day: NaiveDate, time: Timestamp, side: Side, price: f64, volume: f64, source: FillSource) {
        self.fills.push(MMFill {
            day,
            time,
            side,
            price,
            volume,
            source,
            cash: self.state.cash,
            inventory: self.state.inventory,
        });
    }

    fn withdraw(&mut self) {
        for id in self.live.drain(..) {
            self.book.cancel(id);
        }
    }

    fn observe_mid(&mut self) -> Option<f64> {
        if let Some(m) = self.book.mid() {
            self.last_mid = Some(m);
        }
        self.last_mid
    }

    fn quote(&mut self, t: f64, sigma: f64) -> Option<QuotePair> {
        let mid = self.last_mid?;
        let params = self.config.quote_params(sigma);
        match quoting::quotes(mid, self.state.inventory, t, &params) {
            Ok(q) => Some(q),
            Err(e) => {
                log::warn!("quotes withdrawn at t = {t:.4}: {e}");
                self.skipped += 1;
                None
            }
        }
    }

    /// Posts what is left of the quotes without crossing the public book.
    fn post(&mut self, quotes: &QuotePair, capacity: QuoteCapacity, time: Timestamp) {
        if !(quotes.bid < quotes.ask) {
            return;
        }
        let sides = [
            (Side::Buy, quotes.bid, capacity.bid, self.book.best_ask().is_none_or(|a| quotes.bid < a)),
            (Side::Sell, quotes.ask, capacity.ask, self.book.best_bid().is_none_or(|b| quotes.ask > b)),
        ];
        for (side, price, volume, clear) in sides {
            if clear && price > 0.0 && volume > 0.0 {
                let id = self.next_id;
                self.next_id += 1;
                let order = OrderRecord::new(id, side, price, volume, time);
                if self.book.submit(&order).is_ok() {
                    self.live.push(id);
                }
            }
        }
    }

    fn poisson_steps<R: Rng + ?Sized>(
        &mut self,
        part: &DayPartition,
        next_step: &mut f64,
        until: f64,
        sigma: f64,
        rng: &mut R,
    ) {
        let midnight = part.day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        while *next_step < until {
            let t = *next_step;
            *next_step += self.config.dt;
            let Some(q) = self.quote(t, sigma) else { continue };
            let params = self.config.quote_params(sigma).at(t);
            let (lb, la) = (intensity(q.delta_b, &params), intensity(q.delta_a, &params));
            let (state, fills) = step_poisson(self.state, &q, lb, la, self.config.dt, self.config, rng);
            self.state = state;
            let time = midnight + Duration::milliseconds((t * 86_400_000.0) as i64);
            let lot = self.config.lot_size;
            if fills.bid > 0 {
                self.record(part.day, time, Side::Buy, q.bid, fills.bid as f64 * lot, FillSource::Poisson);
            }
            if fills.ask > 0 {
                self.record(part.day, time, Side::Sell, q.ask, fills.ask as f64 * lot, FillSource::Poisson);
            }
        }
    }
}

fn order_is_acceptable(book: &Book, order: &OrderRecord) -> bool {
    order.price.is_finite()
        && order.price > 0.0
        && order.volume.is_finite()
        && order.volume > 0.0
        && book.clock().is_none_or(|c| order.timestamp >= c)
}

/// Replays `days` without and with the market maker.
///
/// The maker quotes with `T = 1` per trading day and `t` the elapsed
/// fraction of the day. Quotes are refreshed before every incoming order; in
/// Poisson mode fills are drawn on a `dt` grid instead of taken from the
/// flow, while the quotes still rest in the book.
pub fn run_simulation<R: Rng + ?Sized>(
    days: &[DayPartition],
    config: &SimConfig,
    rng: &mut R,
) -> Result<SimResult, SimError> {
    config.validate()?;
    let expiry = Duration::days(config.expiry_days);
    let base = replay(days, expiry);
    let baseline: Vec<DailyStats> = base.days.iter().map(daily_stats).collect();
    let closing: Vec<Option<f64>> = base.days.iter().map(|d| d.closing_mid()).collect();
    let mids = daily_closing_mids(&closing);
    let sigma = match config.sigma_mode {
        SigmaMode::Constant { .. } => estimate_sigma(&vec![0.0; days.len()], config.sigma_mode)?,
        mode => estimate_sigma(&mids, mode)?,
    };

    let mut sim = WithMM {
        config,
        book: Book::with_expiry(expiry),
        state: MMState::new(config.c0, config.q0),
        live: Vec::new(),
        next_id: MM_ID_BASE,
        last_mid: None,
        fills: Vec::new(),
        skipped: 0,
    };
    let mut steps = Vec::new();
    let mut quality = Vec::with_capacity(days.len());

    for (d, part) in days.iter().enumerate() {
        let sigma_d = sigma.values[d];
        let mut executed = 0.0;
        let mut spreads = Vec::with_capacity(part.orders.len());
        let mut next_step = 0.0;

        for order in &part.orders {
            let t = day_fraction(part, order.timestamp);
            sim.withdraw();
            if order_is_acceptable(&sim.book, order) {
                sim.book.expire(order.timestamp);
            }
            sim.observe_mid();
            if config.fill_mode == FillMode::Poisson {
                sim.poisson_steps(part, &mut next_step, t, sigma_d, rng);
            }
            let quotes = sim.quote(t, sigma_d);

            let mut remaining = order.clone();
            let mut capacity = QuoteCapacity::full(config.quote_size);
            if let Some(q) = &quotes {
                if config.fill_mode == FillMode::FlowCross && order_is_acceptable(&sim.book, order) {
                    let (state, exec) = step_flow_cross(sim.state, q, &mut capacity, order, config.lot_size);
                    sim.state = state;
                    if let Some(e) = exec {
                        remaining.volume -= e.volume;
                        executed += e.volume;
                        let mm_side = e.aggressor.opposite();
                        sim.record(part.day, e.time, mm_side, e.price, e.volume, FillSource::Intercept);
                    }
                }
                sim.post(q, capacity, order.timestamp);
            }

            if remaining.volume > 0.0 || !order_is_acceptable(&sim.book, order) {
                if let Ok(outcome) = sim.book.submit(&remaining) {
                    for e in &outcome.executions {
                        executed += e.volume;
                        if e.maker_id >= MM_ID_BASE {
                            if config.fill_mode == FillMode::FlowCross {
                                let mm_side = e.aggressor.opposite();
                                sim.state.apply(mm_side, e.price, e.volume, config.lot_size);
                                sim.record(part.day, e.time, mm_side, e.price, e.volume, FillSource::Book);
                            }
                            if !sim.book.contains(e.maker_id) {
                                sim.live.retain(|id| *id != e.maker_id);
                            }
                        }
                    }
                }
            }

            let snap = sim.book.snapshot();
            if let (Some(s), Some(m)) = (snap.spread, snap.mid) {
                spreads.push(s / m);
            }
            sim.observe_mid();
            steps.push(SimStep {
                day: part.day,
                time: order.timestamp,
                t,
                mid: sim.last_mid,
                sigma: sigma_d,
                reservation: quotes.map(|q| q.r),
                bid: quotes.map(|q| q.bid),
                ask: quotes.map(|q| q.ask),
                cash: sim.state.cash,
                inventory: sim.state.inventory,
            });
        }
        if config.fill_mode == FillMode::Poisson {
            sim.poisson_steps(part, &mut next_step, 1.0, sigma_d, rng);
        }
        sim.withdraw();

        let submitted = part.submitted_volume();
        quality.push(DayQuality {
            day: part.day,
            baseline_execution_ratio: baseline[d].execution_ratio,
            mm_execution_ratio: (submitted > 0.0).then(|| executed / submitted),
            baseline_mean_relative_spread: baseline[d].mean_relative_spread,
            mm_mean_relative_spread: mean(spreads.into_iter()),
        });
    }

    let state = sim.state;
    let final_mid = sim.last_mid;
    let final_wealth = match final_mid {
        Some(m) => state.wealth(m, config.lot_size),
        None => state.cash,
    };
    Ok(SimResult {
        final_cash: state.cash,
        final_inventory: state.inventory,
        final_mid,
        final_wealth,
        sigma,
        steps,
        fills: sim.fills,
        quality,
        baseline,
        skipped_quotes: sim.skipped,
    })
}

/// Distribution of final cash over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashSummary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl CashSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let q = |p: f64| {
            let pos = p * (n - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        Some(Self {
            n,
            mean,
            std_dev: population_std(&sorted),
            min: sorted[0],
            p05: q(0.05),
            median: q(0.5),
            p95: q(0.95),
            max: sorted[n - 1],
        })
    }
}

fn write_rows<W: Write, T: Serialize>(header: &[&str], rows: &[T], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_steps_csv<W: Write>(steps: &[SimStep], out: W) -> csv::Result<()> {
    let header = ["day", "time", "t", "mid", "sigma", "reservation", "bid", "ask", "cash", "inventory"];
    write_rows(&header, steps, out)
}

pub fn write_fills_csv<W: Write>(fills: &[MMFill], out: W) -> csv::Result<()> {
    let header = ["day", "time", "side", "price", "volume", "source", "cash", "inventory"];
    write_rows(&header, fills, out)
}

pub fn write_quality_csv<W: Write>(quality: &[DayQuality], out: W) -> csv::Result<()> {
    let header = [
        "day",
        "baseline_execution_ratio",
        "mm_execution_ratio",
        "baseline_mean_relative_spread",
        "mm_mean_relative_spread",
    ];
    write_rows(&header, quality, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_timestamp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(bid: f64, ask: f64) -> QuotePair {
        QuotePair {
            t: 0.0,
            s: 0.5 * (bid + ask),
            q: 0.0,
            r: 0.5 * (bid + ask),
            delta_b: 0.5 * (ask - bid),
            delta_a: 0.5 * (ask - bid),
            bid,
            ask,
            residual_b: 0.0,
            residual_a: 0.0,
        }
    }

    fn order(id: u64, side: Side, price: f64, volume: f64) -> OrderRecord {
        OrderRecord::new(id, side, price, volume, parse_timestamp("2023-04-01T10:00:00Z").unwrap())
    }

    #[test]
    fn constant_mids_have_zero_sigma() {
        let s = estimate_sigma(&[190.0; 12], SigmaMode::Fixed).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn alternating_changes_have_unit_sigma() {
        let mids: Vec<f64> = (0..11).map(|i| 190.0 + (i % 2) as f64).collect();
        let s = estimate_sigma(&mids, SigmaMode::Fixed).unwrap();
        assert!((s.values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rolling_refreshes_every_window() {
        let mids: Vec<f64> = (0..30).map(|i| 190.0 + (i * i % 7) as f64).collect();
        let s = estimate_sigma(&mids, SigmaMode::Rolling { window_days: 10 }).unwrap();
        assert_eq!(s.refreshes, vec![0, 10, 20]);
        assert_eq!(s.values.len(), 30);
        assert!(s.values[..10].iter().all(|v| *v == s.values[0]));
    }

    #[test]
    fn sigma_needs_two_mids() {
        assert_eq!(
            estimate_sigma(&[190.0], SigmaMode::Fixed),
            Err(SimError::InsufficientData { needed: 2, got: 1 })
        );
    }

    #[test]
    fn no_arrivals_leave_state_unchanged() {
        let cfg = SimConfig::default();
        let s = MMState::new(1e5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (next, fills) = step_poisson(s, &pair(180.0, 190.0), 0.0, 0.0, 0.1, &cfg, &mut rng);
        assert_eq!(next, s);
        assert_eq!(fills, PoissonFills::default());
    }

    #[test]
    fn round_trip_captures_spread() {
        let mut s = MMState::new(0.0, 0.0);
        s.apply(Side::Buy, 180.0, 1.0, 1.0);
        s.apply(Side::Sell, 190.0, 1.0, 1.0);
        assert_eq!(s.cash, 10.0);
        assert_eq!(s.inventory, 0.0);
    }

    #[test]
    fn sell_below_bid_is_bought_at_bid() {
        let mut cap = QuoteCapacity::full(100.0);
        let (s, e) = step_flow_cross(MMState::new(0.0, 0.0), &pair(180.0, 190.0), &mut cap, &order(1, Side::Sell, 175.0, 30.0), 1.0);
        let e = e.unwrap();
        assert_eq!((e.price, e.volume, e.taker_id), (180.0, 30.0, 1));
        assert_eq!(s.cash, -5400.0);
        assert_eq!(s.inventory, 30.0);
        assert_eq!(cap.bid, 70.0);
    }

    #[test]
    fn non_crossing_and_touching_orders_pass() {
        let q = pair(180.0, 190.0);
        let mut cap = QuoteCapacity::full(100.0);
        let s0 = MMState::new(0.0, 0.0);
        for o in [order(1, Side::Buy, 185.0, 10.0), order(2, Side::Sell, 180.0, 10.0), order(3, Side::Buy, 190.0, 10.0)] {
            let (s, e) = step_flow_cross(s0, &q, &mut cap, &o, 1.0);
            assert!(e.is_none());
            assert_eq!(s, s0);
        }
    }

    #[test]
    fn capacity_limits_fill() {
        let mut cap = QuoteCapacity::full(100.0);
        let (_, e) = step_flow_cross(MMState::new(0.0, 0.0), &pair(180.0, 190.0), &mut cap, &order(1, Side::Buy, 200.0, 250.0), 1.0);
        assert_eq!(e.unwrap().volume, 100.0);
        let (_, e) = step_flow_cross(MMState::new(0.0, 0.0), &pair(180.0, 190.0), &mut cap, &order(2, Side::Buy, 200.0, 5.0), 1.0);
        assert!(e.is_none());
    }

    #[test]
    fn zero_horizon_keeps_initial_cash() {
        let r = run_simulation(&[], &SimConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.final_cash, 1e5);
        assert_eq!(r.final_wealth, 1e5);
        assert!(r.steps.is_empty());
    }

    #[test]
    fn summary_quantiles() {
        let s = CashSummary::from_values(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.min, s.median, s.max, s.mean), (1.0, 3.0, 5.0, 3.0));
        assert!((s.p95 - 4.8).abs() < 1e-12);
    }

    #[test]
    fn empty_tables_keep_their_header() {
        let mut buf = Vec::new();
        write_fills_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "day,time,side,price,volume,source,cash,inventory\n");
    }
}
