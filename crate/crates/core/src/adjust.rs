//! Counterfactual mid-price chain under market-maker intervention.
//!
//! The daily mid is modelled as moving with the end-of-day book imbalance,
//!
//! ```text
//! s_hat[t+1] = s_hat[t] + xi[t] * (Qb[t] - Qa[t]) + eps[t]
//! ```
//!
//! where `xi` is the point elasticity of the mid with respect to imbalance.
//! Running the chain on the with-MM book totals and on the baseline totals
//! gives a per-day scale factor `s_hat / s` used to rescale the next day's
//! order prices.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{replay, replay_day, Book, BookSnapshot};
use crate::bootstrap::{resample_day, rng_for, BootstrapError};
use crate::ingest::{DayPartition, OrderRecord};
use crate::quoting;
use crate::simulation::{
    daily_closing_mids, estimate_sigma, step_flow_cross, FillSource, MMFill, MMState, QuoteCapacity, SigmaMode,
    SimConfig, SimError,
};
use crate::stats::{least_squares, LineFit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdjustError {
    #[error("series lengths differ: {0}")]
    Misaligned(String),
    #[error("need at least {needed} days, got {got}")]
    TooFewDays { needed: usize, got: usize },
    #[error("reference mid must be positive, got {0}")]
    NonPositiveMid(f64),
    #[error("no day has a defined mid")]
    NoMid,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

/// Resting USD on each side of the book at the end of a day.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub bid: f64,
    pub ask: f64,
}

impl Totals {
    pub fn of(snap: &BookSnapshot) -> Self {
        Self {
            bid: snap.total_bid,
            ask: snap.total_ask,
        }
    }

    pub fn imbalance(&self) -> f64 {
        self.bid - self.ask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityEstimate {
    /// `xi[t]` drives the move from day `t` to `t + 1`; one value per day,
    /// the last carried forward.
    pub xi: Vec<f64>,
    pub window: usize,
    /// Regression behind each transition; `None` when the window was
    /// degenerate and the previous value was kept.
    pub fits: Vec<Option<LineFit>>,
    /// Observations per fit.
    pub n: usize,
    /// `ds[t] - xi[t] * imbalance[t]` for each observed transition.
    pub residuals: Vec<f64>,
}

impl ElasticityEstimate {
    pub fn degenerate_days(&self) -> Vec<usize> {
        self.fits
            .iter()
            .enumerate()
            .filter_map(|(t, f)| f.is_none().then_some(t))
            .collect()
    }

    /// `xi` for day `t`, carrying the last value past the estimation span.
    pub fn at(&self, t: usize) -> f64 {
        self.xi.get(t).or(self.xi.last()).copied().unwrap_or(0.0)
    }
}

/// Rolling OLS slope of the daily mid change on end-of-day imbalance.
///
/// The move from day `t` to `t + 1` uses the `window` transitions that ended
/// by day `t`; transitions before the first full window use the first window.
pub fn estimate_elasticity(
    daily_mids: &[f64],
    daily_imbalances: &[f64],
    window: usize,
) -> Result<ElasticityEstimate, AdjustError> {
    let n = daily_mids.len();
    if daily_imbalances.len() != n {
        return Err(AdjustError::Misaligned(format!(
            "{n} mids, {} imbalances",
            daily_imbalances.len()
        )));
    }
    let window = window.max(1);
    if n < window + 1 {
        return Err(AdjustError::TooFewDays {
            needed: window + 1,
            got: n,
        });
    }
    let ds: Vec<f64> = daily_mids.windows(2).map(|w| w[1] - w[0]).collect();
    let x = &daily_imbalances[..n - 1];
    let mut xi = Vec::with_capacity(n);
    let mut fits = Vec::with_capacity(n - 1);
    let mut current = 0.0;
    for t in 0..n - 1 {
        let lo = t.saturating_sub(window);
        let span = if t < window { 0..window } else { lo..t };
        let fit = least_squares(&x[span.clone()], &ds[span]);
        match fit {
            Some(f) => current = f.slope,
            None => log::debug!("degenerate imbalance window at day {t}; xi held at {current}"),
        }
        fits.push(fit);
        xi.push(current);
    }
    xi.push(current);
    let residuals = (0..n - 1).map(|t| ds[t] - xi[t] * x[t]).collect();
    Ok(ElasticityEstimate {
        xi,
        window,
        fits,
        n: window,
        residuals,
    })
}

/// One day of the adjusted series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedDay {
    pub day: usize,
    pub date: Option<NaiveDate>,
    /// Baseline chain driven by the baseline book totals.
    pub s: f64,
    pub s_hat: f64,
    pub scale: f64,
    /// With-MM totals at the end of the day.
    pub qb: f64,
    pub qa: f64,
    pub xi: f64,
    /// Observed baseline closing mid, when known.
    pub s_observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdjustedSeries {
    pub days: Vec<AdjustedDay>,
}

impl AdjustedSeries {
    pub fn scales(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.scale).collect()
    }

    pub fn s_hat(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.s_hat).collect()
    }
}

/// Draws added to each step of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise<'a> {
    Zero,
    /// `eps[t]` for each transition.
    Draws(&'a [f64]),
}

impl Noise<'_> {
    fn at(&self, t: usize) -> f64 {
        match self {
            Noise::Zero => 0.0,
            Noise::Draws(d) => d[t],
        }
    }
}

/// Builds `s_hat` from `with_mm` totals and the reference chain from
/// `baseline` totals, both starting at `s0`.
pub fn adjusted_chain(
    s0: f64,
    baseline: &[Totals],
    with_mm: &[Totals],
    xi: &[f64],
    noise: Noise<'_>,
) -> Result<AdjustedSeries, AdjustError> {
    let n = baseline.len();
    if with_mm.len() != n || xi.len() != n {
        return Err(AdjustError::Misaligned(format!(
            "{n} baseline totals, {} with-MM totals, {} xi",
            with_mm.len(),
            xi.len()
        )));
    }
    if let Noise::Draws(d) = noise {
        if d.len() + 1 < n {
            return Err(AdjustError::Misaligned(format!("{} noise draws for {n} days", d.len())));
        }
    }
    if !(s0 > 0.0) {
        return Err(AdjustError::NonPositiveMid(s0));
    }
    let mut days = Vec::with_capacity(n);
    let (mut s, mut s_hat) = (s0, s0);
    for t in 0..n {
        if !(s > 0.0) {
            return Err(AdjustError::NonPositiveMid(s));
        }
        days.push(AdjustedDay {
            day: t,
            date: None,
            s,
            s_hat,
            scale: s_hat / s,
            qb: with_mm[t].bid,
            qa: with_mm[t].ask,
            xi: xi[t],
            s_observed: None,
        });
        if t + 1 < n {
            let eps = noise.at(t);
            s = s + xi[t] * baseline[t].imbalance() + eps;
            s_hat = s_hat + xi[t] * with_mm[t].imbalance() + eps;
        }
    }
    Ok(AdjustedSeries { days })
}

/// Multiplies every price by `s_hat / s`.
pub fn rescale_prices(orders: &[OrderRecord], s: f64, s_hat: f64) -> Result<Vec<OrderRecord>, AdjustError> {
    if !(s > 0.0) {
        return Err(AdjustError::NonPositiveMid(s));
    }
    Ok(orders
        .iter()
        .map(|o| OrderRecord {
            price: o.price * s_hat / s,
            ..o.clone()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Deterministic,
    /// Resample the elasticity residuals with replacement.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustConfig {
    pub sim: SimConfig,
    /// Elasticity window, days.
    pub window: usize,
    /// Resampled days appended after the data.
    pub extra_days: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    /// Fixed elasticity used instead of the rolling estimate.
    pub xi: Option<f64>,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            window: 30,
            extra_days: 15,
            seed: 0,
            noise: NoiseMode::default(),
            xi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustResult {
    pub series: AdjustedSeries,
    pub elasticity: ElasticityEstimate,
    pub baseline_totals: Vec<Totals>,
    pub fills: Vec<MMFill>,
    pub final_cash: f64,
    pub final_inventory: f64,
}

/// Appends `extra` days resampled from the last day, each shifted one day
/// further and renumbered after the largest existing id.
pub fn extend_with_resampled(days: &[DayPartition], extra: usize, seed: u64) -> Result<Vec<DayPartition>, AdjustError> {
    let mut out = days.to_vec();
    let Some(last) = days.last() else {
        return Ok(out);
    };
    let mut next_id = days
        .iter()
        .flat_map(|d| d.orders.iter().map(|o| o.id))
        .max()
        .map_or(0, |m| m + 1);
    for k in 0..extra {
        let shift = Duration::days(k as i64 + 1);
        let mut rng = rng_for(seed, 0, k as u32);
        let mut part = resample_day(last, &mut rng)?;
        part.day = last.day + shift;
        for o in &mut part.orders {
            o.timestamp += shift;
            o.id = next_id;
            next_id += 1;
        }
        out.push(part);
    }
    Ok(out)
}

/// Inserts the market maker on `insertion_day` (`None` for no intervention)
/// and propagates its effect on the book imbalance into the mid chain.
///
/// Each day from insertion the maker quotes once around the day's opening
/// mid and absorbs incoming orders that strictly cross its quotes; the
/// remainder trades in the book. The day's closing totals advance `s_hat`,
/// and the next day's order prices are rescaled by `s_hat / s`.
pub fn run_price_adjustment(
    days: &[DayPartition],
    config: &AdjustConfig,
    insertion_day: Option<usize>,
) -> Result<AdjustResult, AdjustError> {
    config.sim.validate()?;
    let n_data = days.len();
    if n_data < 2 {
        return Err(AdjustError::TooFewDays { needed: 2, got: n_data });
    }
    let expiry = Duration::days(config.sim.expiry_days);
    let horizon = extend_with_resampled(days, config.extra_days, config.seed)?;
    let h = horizon.len();

    let base = replay(&horizon, expiry);
    let baseline_totals: Vec<Totals> = base.days.iter().map(|d| Totals::of(&d.close)).collect();
    let closing: Vec<Option<f64>> = base.days.iter().map(|d| d.closing_mid()).collect();
    let mids = daily_closing_mids(&closing[..n_data]);
    if mids.is_empty() {
        return Err(AdjustError::NoMid);
    }
    let imbalances: Vec<f64> = baseline_totals[..n_data].iter().map(Totals::imbalance).collect();
    let window = config.window.min(n_data - 1);
    if window < config.window {
        log::info!("elasticity window shortened to {window} days");
    }
    let elasticity = estimate_elasticity(&mids, &imbalances, window)?;
    let xi: Vec<f64> = match config.xi {
        Some(x) => vec![x; h],
        None => (0..h).map(|t| elasticity.at(t)).collect(),
    };

    let noise: Vec<f64> = match config.noise {
        NoiseMode::Deterministic => Vec::new(),
        NoiseMode::Stochastic => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1);
            let r = &elasticity.residuals;
            (0..h).map(|_| r[rng.random_range(0..r.len())]).collect()
        }
    };
    let noise_at = |t: usize| noise.get(t).copied().unwrap_or(0.0);

    let sigma = match config.sim.sigma_mode {
        SigmaMode::Constant { sigma } => vec![sigma; h],
        mode => {
            let mut v = estimate_sigma(&mids, mode)?.values;
            let last = *v.last().expect("nonempty");
            v.resize(h, last);
            v
        }
    };

    let s0 = mids[0];
    let mut book = Book::with_expiry(expiry);
    let mut state = MMState::new(config.sim.c0, config.sim.q0);
    let mut fills = Vec::new();
    let mut with_mm = Vec::with_capacity(h);
    let (mut s, mut s_hat) = (s0, s0);
    let mut chain = Vec::with_capacity(h);
    let mut last_mid = None;

    for (t, part) in horizon.iter().enumerate() {
        chain.push((s, s_hat));
        let active = insertion_day.is_some_and(|d| t >= d);
        let part = if s_hat != s {
            let orders = rescale_prices(&part.orders, s, s_hat)?;
            &DayPartition { day: part.day, orders }
        } else {
            part
        };

        if active {
            if let Some(m) = book.mid() {
                last_mid = Some(m);
            }
            let mid = last_mid.unwrap_or(s_hat);
            let params = config.sim.quote_params(sigma[t]);
            let quotes = match quoting::quotes(mid, state.inventory, 0.0, &params) {
                Ok(q) => Some(q),
                Err(e) => {
                    log::warn!("day {t}: quotes withdrawn: {e}");
                    None
                }
            };
            for order in &part.orders {
                let mut remaining = order.clone();
                let acceptable = order.price > 0.0
                    && order.volume > 0.0
                    && book.clock().is_none_or(|c| order.timestamp >= c);
                if let (Some(q), true) = (&quotes, acceptable) {
                    let mut capacity = QuoteCapacity::full(config.sim.quote_size);
                    let (next, exec) = step_flow_cross(state, q, &mut capacity, order, config.sim.lot_size);
                    state = next;
                    if let Some(e) = exec {
                        remaining.volume -= e.volume;
                        fills.push(MMFill {
                            day: part.day,
                            time: e.time,
                            side: e.aggressor.opposite(),
                            price: e.price,
                            volume: e.volume,
                            source: FillSource::Intercept,
                            cash: state.cash,
                            inventory: state.inventory,
                        });
                    }
                }
                if remaining.volume > 0.0 || !acceptable {
                    let _ = book.submit(&remaining);
                } else {
                    book.expire(order.timestamp);
                }
            }
        } else {
            replay_day(&mut book, part);
        }
        if let Some(m) = book.mid() {
            last_mid = Some(m);
        }

        let totals = Totals::of(&book.snapshot());
        with_mm.push(totals);
        let eps = noise_at(t);
        s = s + xi[t] * baseline_totals[t].imbalance() + eps;
        s_hat = s_hat + xi[t] * totals.imbalance() + eps;
    }

    let mut series = adjusted_chain(s0, &baseline_totals, &with_mm, &xi, if noise.is_empty() {
        Noise::Zero
    } else {
        Noise::Draws(&noise)
    })?;
    for (row, part) in series.days.iter_mut().zip(&horizon) {
        row.date = Some(part.day);
        row.s_observed = closing[row.day];
        debug_assert_eq!((row.s, row.s_hat), chain[row.day]);
    }
    Ok(AdjustResult {
        series,
        elasticity,
        baseline_totals,
        fills,
        final_cash: state.cash,
        final_inventory: state.inventory,
    })
}

/// Writes `day,s,ŝ,scale,Qb,Qa,xi,s_observed,date`.
pub fn write_adjusted_csv<W: Write>(series: &AdjustedSeries, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day", "s", "ŝ", "scale", "Qb", "Qa", "xi", "s_observed", "date"])?;
    for d in &series.days {
        w.write_record([
            d.day.to_string(),
            d.s.to_string(),
            d.s_hat.to_string(),
            d.scale.to_string(),
            d.qb.to_string(),
            d.qa.to_string(),
            d.xi.to_string(),
            d.s_observed.map(|v| v.to_string()).unwrap_or_default(),
            d.date.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
