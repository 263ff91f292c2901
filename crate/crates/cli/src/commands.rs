use anyhow::{bail, Context, Result};
use chrono::Duration;
use informal_lob::adjust::{run_price_adjustment, write_adjusted_csv, AdjustConfig, NoiseMode};
use informal_lob::book::{replay, BookSnapshot, Replay};
use informal_lob::bootstrap::{rng_for, run_replicates, ReplicateManifest, ReplicatePlan};
use informal_lob::ingest::{format_timestamp, write_orders_csv, DayPartition, Side, Timestamp};
use informal_lob::simulation::{
    daily_closing_mids, estimate_sigma, run_simulation, write_fills_csv, write_quality_csv, write_steps_csv,
    CashSummary, DayQuality, SigmaMode, SimResult,
};
use informal_lob::stats::{
    calibrate_intensity, daily_market_order_sizes, daily_stats, ecdf_tail, fit_exponential, limit_order_sizes,
    price_impact, volume_profile, Bucketing, DistanceScale, ExpFit, Histogram,
};
use serde::Serialize;
use serde_json::json;

use crate::input::Loaded;
use crate::output::Output;
use crate::settings::Settings;

pub struct Run<'a> {
    pub settings: &'a Settings,
    pub input: &'a Loaded,
}

impl Run<'_> {
    fn days(&self) -> Result<Vec<DayPartition>> {
        Ok(self.input.days(self.settings.optional("horizon_days")?))
    }

    fn expiry(&self) -> Result<Duration> {
        Ok(Duration::days(self.settings.get("expiry_days")?))
    }

    fn seed(&self) -> Result<u64> {
        self.settings
            .seed()?
            .context("randomized command run without a seed")
    }

    fn replayed(&self) -> Result<(Vec<DayPartition>, Replay)> {
        self.input.require_orders()?;
        let days = self.days()?;
        if days.is_empty() {
            bail!("no days within the horizon");
        }
        let r = replay(&days, self.expiry()?);
        Ok((days, r))
    }
}

fn ts(t: &Timestamp) -> String {
    format_timestamp(t)
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Buy => "bid",
        Side::Sell => "ask",
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fit(name: &str, samples: &[f64]) -> Option<ExpFit> {
    let positive: Vec<f64> = samples.iter().copied().filter(|v| *v > 0.0).collect();
    match fit_exponential(&positive) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("no exponential fit for {name}: {e}");
            None
        }
    }
}

pub fn ingest(run: &Run, out: &mut Output) -> Result<()> {
    let orders = &run.input.orders;
    out.with("orders.csv", |f| write_orders_csv(orders, f))?;
    out.table("rejects.csv", &["file", "line", "reason"], &run.input.rejects)?;
    let days = run.days()?;

    #[derive(Serialize)]
    struct Row {
        day: String,
        orders: usize,
        buys: usize,
        sells: usize,
        submitted_volume: f64,
        first: String,
        last: String,
    }
    let rows = days.iter().map(|d| Row {
        day: d.day.to_string(),
        orders: d.orders.len(),
        buys: d.orders.iter().filter(|o| o.side == Side::Buy).count(),
        sells: d.orders.iter().filter(|o| o.side == Side::Sell).count(),
        submitted_volume: d.submitted_volume(),
        first: d.orders.first().map(|o| ts(&o.timestamp)).unwrap_or_default(),
        last: d.orders.last().map(|o| ts(&o.timestamp)).unwrap_or_default(),
    });
    out.table(
        "days.csv",
        &["day", "orders", "buys", "sells", "submitted_volume", "first", "last"],
        rows,
    )?;
    out.json(
        "summary.json",
        &json!({
            "orders": orders.len(),
            "rejects": run.input.rejects.len(),
            "days": days.len(),
            "first": days.first().map(|d| d.day.to_string()),
            "last": days.last().map(|d| d.day.to_string()),
        }),
    )
}

#[derive(Serialize)]
struct DepthRow {
    day: String,
    side: &'static str,
    price: f64,
    distance: f64,
    volume: f64,
}

fn depth_rows(day: String, snap: &BookSnapshot) -> impl Iterator<Item = DepthRow> + '_ {
    [Side::Buy, Side::Sell].into_iter().flat_map(move |side| {
        let day = day.clone();
        snap.depth(side).iter().map(move |l| DepthRow {
            day: day.clone(),
            side: side_name(side),
            price: l.price,
            distance: l.distance,
            volume: l.volume,
        })
    })
}

pub fn replay_cmd(run: &Run, out: &mut Output) -> Result<()> {
    let (days, r) = run.replayed()?;

    #[derive(Serialize)]
    struct Exec {
        day: String,
        time: String,
        price: f64,
        volume: f64,
        aggressor: String,
        maker_id: u64,
        taker_id: u64,
    }
    let execs = r.days.iter().flat_map(|d| {
        d.executions.iter().map(|e| Exec {
            day: d.day.to_string(),
            time: ts(&e.time),
            price: e.price,
            volume: e.volume,
            aggressor: e.aggressor.to_string(),
            maker_id: e.maker_id,
            taker_id: e.taker_id,
        })
    });
    out.table(
        "executions.csv",
        &["day", "time", "price", "volume", "aggressor", "maker_id", "taker_id"],
        execs,
    )?;

    #[derive(Serialize)]
    struct Event {
        day: String,
        event: usize,
        time: Option<String>,
        best_bid: Option<f64>,
        best_ask: Option<f64>,
        mid: Option<f64>,
        spread: Option<f64>,
        total_bid: f64,
        total_ask: f64,
    }
    let events = r.days.iter().flat_map(|d| {
        d.snapshots.iter().enumerate().map(|(i, s)| Event {
            day: d.day.to_string(),
            event: i,
            time: s.time.as_ref().map(ts),
            best_bid: s.best_bid,
            best_ask: s.best_ask,
            mid: s.mid,
            spread: s.spread,
            total_bid: s.total_bid,
            total_ask: s.total_ask,
        })
    });
    out.table(
        "events.csv",
        &["day", "event", "time", "best_bid", "best_ask", "mid", "spread", "total_bid", "total_ask"],
        events,
    )?;

    let depth = r.days.iter().flat_map(|d| depth_rows(d.day.to_string(), &d.close));
    out.table("depth.csv", &["day", "side", "price", "distance", "volume"], depth)?;

    let rejected = r.days.iter().flat_map(|d| {
        d.rejected
            .iter()
            .map(move |(id, reason)| (d.day.to_string(), *id, reason.clone()))
    });
    out.table("rejected.csv", &["day", "order_id", "reason"], rejected)?;

    let expired = r.days.iter().flat_map(|d| {
        d.expired.iter().map(move |o| {
            (
                d.day.to_string(),
                o.order_id,
                side_name(o.side),
                o.price,
                o.remaining_volume,
                ts(&o.entry_time),
            )
        })
    });
    out.table(
        "expired.csv",
        &["day", "order_id", "side", "price", "remaining_volume", "entry_time"],
        expired,
    )?;

    out.json(
        "summary.json",
        &json!({
            "days": days.len(),
            "orders": days.iter().map(|d| d.orders.len()).sum::<usize>(),
            "executions": r.executions().count(),
            "ledger": r.ledger,
            "resting_volume": r.resting_volume,
            "final_mid": r.final_book.mid,
        }),
    )
}

fn profile_buckets() -> Result<Vec<(&'static str, Bucketing)>> {
    Ok(vec![
        ("absolute", Bucketing::linear(50.0, 25, DistanceScale::Absolute)?),
        ("relative", Bucketing::log(1e-4, 1.0, 20, DistanceScale::RelativeToMid)?),
    ])
}

pub fn stats(run: &Run, out: &mut Output) -> Result<()> {
    let (days, r) = run.replayed()?;
    let bins: usize = run.settings.get("hist_bins")?;
    let daily: Vec<_> = r.days.iter().map(daily_stats).collect();

    #[derive(Serialize)]
    struct Candle {
        day: String,
        open: Option<f64>,
        high: Option<f64>,
        low: Option<f64>,
        close: Option<f64>,
        executed_volume: f64,
        submitted_volume: f64,
        execution_ratio: Option<f64>,
        mean_relative_spread: Option<f64>,
        mean_relative_distance_bid: Option<f64>,
        mean_relative_distance_ask: Option<f64>,
    }
    let candles = daily.iter().map(|s| Candle {
        day: s.day.to_string(),
        open: s.ohlc.map(|c| c.open),
        high: s.ohlc.map(|c| c.high),
        low: s.ohlc.map(|c| c.low),
        close: s.ohlc.map(|c| c.close),
        executed_volume: s.executed_volume,
        submitted_volume: s.submitted_volume,
        execution_ratio: s.execution_ratio,
        mean_relative_spread: s.mean_relative_spread,
        mean_relative_distance_bid: s.mean_relative_distance_bid,
        mean_relative_distance_ask: s.mean_relative_distance_ask,
    });
    out.table(
        "candles.csv",
        &[
            "day",
            "open",
            "high",
            "low",
            "close",
            "executed_volume",
            "submitted_volume",
            "execution_ratio",
            "mean_relative_spread",
            "mean_relative_distance_bid",
            "mean_relative_distance_ask",
        ],
        candles,
    )?;

    let mut spreads = Vec::new();
    let mut spread_rows = Vec::new();
    for d in &r.days {
        for (i, s) in d.snapshots.iter().enumerate() {
            if let (Some(spread), Some(mid)) = (s.spread, s.mid) {
                spreads.push(spread / mid);
                spread_rows.push((d.day.to_string(), i, s.time.as_ref().map(ts), mid, spread, spread / mid));
            }
        }
    }
    out.table(
        "spreads.csv",
        &["day", "event", "time", "mid", "spread", "relative_spread"],
        spread_rows,
    )?;

    let mut rel_distance = [Vec::new(), Vec::new()];
    let mut distance_rows = Vec::new();
    for d in &r.days {
        for p in &d.placements {
            let mid = d.snapshots.get(p.event).and_then(|s| s.mid);
            let rel = mid.map(|m| p.distance / m);
            if let Some(v) = rel {
                rel_distance[usize::from(p.side == Side::Sell)].push(v);
            }
            distance_rows.push((
                d.day.to_string(),
                p.event,
                p.order_id,
                side_name(p.side),
                p.price,
                p.volume,
                p.distance,
                rel,
            ));
        }
    }
    out.table(
        "distances.csv",
        &["day", "event", "order_id", "side", "price", "volume", "distance", "relative_distance"],
        distance_rows,
    )?;

    let series = [
        ("relative_spread", &spreads),
        ("relative_distance_bid", &rel_distance[0]),
        ("relative_distance_ask", &rel_distance[1]),
    ];
    let mut hist_rows = Vec::new();
    for (name, values) in series {
        let h = Histogram::linear(values, bins);
        for ((w, count), density) in h.edges.windows(2).zip(&h.counts).zip(h.density()) {
            hist_rows.push((name, w[0], w[1], *count, density));
        }
    }
    out.table("histograms.csv", &["series", "lower", "upper", "count", "density"], hist_rows)?;

    let mut profile_rows = Vec::new();
    for (scale, bucketing) in profile_buckets()? {
        for side in [Side::Buy, Side::Sell] {
            let nb = bucketing.edges.len() - 1;
            let mut sums = vec![0.0; nb];
            let mut used = 0usize;
            for d in &r.days {
                if let Ok(p) = volume_profile(&d.snapshots, side, &bucketing) {
                    for (acc, b) in sums.iter_mut().zip(&p.buckets) {
                        *acc += b.mean_relative_volume * p.snapshots as f64;
                    }
                    used += p.snapshots;
                }
            }
            if used == 0 {
                log::warn!("no {} side snapshots for the {scale} profile", side_name(side));
                continue;
            }
            for (i, s) in sums.iter().enumerate() {
                profile_rows.push((
                    side_name(side),
                    scale,
                    bucketing.edges[i],
                    bucketing.edges[i + 1],
                    s / used as f64,
                    used,
                ));
            }
        }
    }
    out.table(
        "profiles.csv",
        &["side", "scale", "lower", "upper", "mean_relative_volume", "snapshots"],
        profile_rows,
    )?;

    let market: Vec<f64> = daily_market_order_sizes(&r.days).into_iter().flatten().collect();
    let limit = limit_order_sizes(&r.days);
    let ecdf = ecdf_tail(&market)
        .into_iter()
        .map(|(x, p)| ("market", x, p))
        .chain(ecdf_tail(&limit).into_iter().map(|(x, p)| ("limit", x, p)));
    out.table("ecdf.csv", &["kind", "size", "tail"], ecdf)?;

    let tau: usize = run.settings.get("tau")?;
    let impact = match price_impact(&r.market_orders(), &r.mid_series(), tau, run.settings.get("impact_bins")?) {
        Ok(fit) => Some(fit),
        Err(e) => {
            log::warn!("no price impact fit: {e}");
            None
        }
    };
    let bins_rows = impact.iter().flat_map(|f| {
        f.bins
            .iter()
            .map(|b| (b.lower, b.upper, b.count, b.mean_ln_q, b.mean_response))
    });
    out.table(
        "impact.csv",
        &["lower", "upper", "count", "mean_ln_q", "mean_response"],
        bins_rows,
    )?;

    let ratios: Vec<f64> = daily.iter().filter_map(|s| s.execution_ratio).collect();
    out.json(
        "summary.json",
        &json!({
            "days": days.len(),
            "orders": days.iter().map(|d| d.orders.len()).sum::<usize>(),
            "executions": r.executions().count(),
            "market_orders": market.len(),
            "execution_ratio": {
                "mean": mean(ratios.iter().copied()),
                "max": ratios.iter().copied().reduce(f64::max),
            },
            "mean_relative_spread": mean(daily.iter().filter_map(|s| s.mean_relative_spread)),
            "fits": {
                "relative_spread": fit("relative spread", &spreads),
                "relative_distance_bid": fit("bid distance", &rel_distance[0]),
                "relative_distance_ask": fit("ask distance", &rel_distance[1]),
                "market_order_size": fit("market order size", &market),
                "limit_order_size": fit("limit order size", &limit),
            },
            "impact": impact.as_ref().map(|f| json!({
                "k": f.k,
                "intercept": f.intercept,
                "r_squared": f.r_squared,
                "tau": f.tau,
                "observations": f.observations,
            })),
        }),
    )
}

pub fn calibrate(run: &Run, out: &mut Output) -> Result<()> {
    let (days, r) = run.replayed()?;
    let intensity = calibrate_intensity(&daily_market_order_sizes(&r.days)).context("calibrating intensity")?;
    let tau: usize = run.settings.get("tau")?;
    let impact = price_impact(&r.market_orders(), &r.mid_series(), tau, run.settings.get("impact_bins")?)
        .map_err(|e| log::warn!("no price impact fit: {e}"))
        .ok();
    let closing: Vec<Option<f64>> = r.days.iter().map(|d| d.closing_mid()).collect();
    let sigma = estimate_sigma(&daily_closing_mids(&closing), SigmaMode::Fixed)
        .map_err(|e| log::warn!("no volatility estimate: {e}"))
        .ok()
        .and_then(|s| s.values.first().copied());

    out.json(
        "calibration.json",
        &json!({
            "days": days.len(),
            "lambda": intensity.lambda,
            "alpha": intensity.alpha,
            "size_fit": intensity.size_fit,
            "days_used": intensity.days_used,
            "k": impact.as_ref().map(|f| f.k),
            "impact_r_squared": impact.as_ref().map(|f| f.r_squared),
            "sigma": sigma,
        }),
    )?;
    let mut conf = format!("lambda = {}\nalpha = {}\n", intensity.lambda, intensity.alpha);
    if let Some(f) = &impact {
        conf += &format!("k = {}\n", f.k);
    }
    if let Some(s) = sigma {
        conf += &format!("sigma = {s}\n");
    }
    use std::io::Write;
    let mut f = out.file("calibrated.conf")?;
    f.write_all(conf.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn quality_summary(quality: &[DayQuality]) -> serde_json::Value {
    let compared: Vec<(f64, f64)> = quality
        .iter()
        .filter_map(|q| Some((q.baseline_mean_relative_spread?, q.mm_mean_relative_spread?)))
        .collect();
    let narrower = compared.iter().filter(|(b, m)| m < b).count();
    json!({
        "baseline_mean_execution_ratio": mean(quality.iter().filter_map(|q| q.baseline_execution_ratio)),
        "mm_mean_execution_ratio": mean(quality.iter().filter_map(|q| q.mm_execution_ratio)),
        "baseline_mean_relative_spread": mean(compared.iter().map(|c| c.0)),
        "mm_mean_relative_spread": mean(compared.iter().map(|c| c.1)),
        "share_of_days_spread_reduced": (!compared.is_empty()).then(|| narrower as f64 / compared.len() as f64),
    })
}

/// Simulation draws use their own stream, apart from the resampling streams.
const SIM_STREAM: u32 = u32::MAX;

fn write_sim(out: &mut Output, r: &SimResult) -> Result<()> {
    out.with("steps.csv", |f| write_steps_csv(&r.steps, f))?;
    out.with("fills.csv", |f| write_fills_csv(&r.fills, f))?;
    out.with("quality.csv", |f| write_quality_csv(&r.quality, f))
}

pub fn mm_sim(run: &Run, out: &mut Output) -> Result<()> {
    let config = run.settings.sim_config()?;
    let days = run.days()?;
    let mut rng = rng_for(run.seed()?, 0, SIM_STREAM);
    let r = run_simulation(&days, &config, &mut rng)?;
    write_sim(out, &r)?;
    out.json(
        "summary.json",
        &json!({
            "days": days.len(),
            "final_cash": r.final_cash,
            "final_inventory": r.final_inventory,
            "final_mid": r.final_mid,
            "final_wealth": r.final_wealth,
            "wealth_over_c0": r.final_wealth / config.c0,
            "fills": r.fills.len(),
            "skipped_quotes": r.skipped_quotes,
            "sigma": r.sigma,
            "quality": quality_summary(&r.quality),
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
struct ReplicateRow {
    replicate: usize,
    final_cash: f64,
    final_wealth: f64,
    final_inventory: f64,
    fills: usize,
    baseline_mean_execution_ratio: Option<f64>,
    mm_mean_execution_ratio: Option<f64>,
}

pub fn bootstrap(run: &Run, out: &mut Output) -> Result<()> {
    let (days, _) = run.replayed()?;
    let config = run.settings.sim_config()?;
    let seed = run.seed()?;
    let plan = ReplicatePlan::over(seed, run.settings.get("replicates")?, &days)?;
    let outcomes = run_replicates(&plan, &days, |index, flow| {
        let mut rng = rng_for(seed, index as u32, SIM_STREAM);
        run_simulation(&flow, &config, &mut rng).map(|r| ReplicateRow {
            replicate: index,
            final_cash: r.final_cash,
            final_wealth: r.final_wealth,
            final_inventory: r.final_inventory,
            fills: r.fills.len(),
            baseline_mean_execution_ratio: mean(r.quality.iter().filter_map(|q| q.baseline_execution_ratio)),
            mm_mean_execution_ratio: mean(r.quality.iter().filter_map(|q| q.mm_execution_ratio)),
        })
    });
    let manifest = ReplicateManifest::new(&plan, &outcomes);
    let rows: Vec<ReplicateRow> = outcomes.into_iter().filter_map(|o| o.result.ok()).collect();
    if rows.is_empty() {
        bail!("all {} replicates failed", plan.n_replicates);
    }
    out.table(
        "final_cash.csv",
        &[
            "replicate",
            "final_cash",
            "final_wealth",
            "final_inventory",
            "fills",
            "baseline_mean_execution_ratio",
            "mm_mean_execution_ratio",
        ],
        &rows,
    )?;
    let cash: Vec<f64> = rows.iter().map(|r| r.final_cash).collect();
    let wealth: Vec<f64> = rows.iter().map(|r| r.final_wealth).collect();
    let mut hist_rows = Vec::new();
    for (name, values) in [("final_cash", &cash), ("final_wealth", &wealth)] {
        let h = Histogram::linear(values, run.settings.get("hist_bins")?);
        for ((w, count), density) in h.edges.windows(2).zip(&h.counts).zip(h.density()) {
            hist_rows.push((name, w[0], w[1], *count, density));
        }
    }
    out.table(
        "final_cash_hist.csv",
        &["series", "lower", "upper", "count", "density"],
        hist_rows,
    )?;
    out.json("replicates.json", &manifest)?;
    out.json(
        "summary.json",
        &json!({
            "replicates": plan.n_replicates,
            "failures": manifest.failures(),
            "final_cash": CashSummary::from_values(&cash),
            "final_wealth": CashSummary::from_values(&wealth),
            "share_wealth_above_c0": wealth.iter().filter(|w| **w > config.c0).count() as f64 / wealth.len() as f64,
            "mm_mean_execution_ratio": mean(rows.iter().filter_map(|r| r.mm_mean_execution_ratio)),
        }),
    )
}

pub fn adjust(run: &Run, out: &mut Output) -> Result<()> {
    run.input.require_orders()?;
    let days = run.days()?;
    let s = run.settings;
    let noise = match s.str("noise") {
        "deterministic" => NoiseMode::Deterministic,
        "stochastic" => NoiseMode::Stochastic,
        other => bail!("invalid value `{other}` for `noise`: expected deterministic or stochastic"),
    };
    let insertion = match s.str("insertion_day") {
        "none" => None,
        _ => Some(s.get::<usize>("insertion_day")?),
    };
    let config = AdjustConfig {
        sim: s.sim_config()?,
        window: s.get("window")?,
        extra_days: s.get("extra_days")?,
        seed: run.seed()?,
        noise,
        xi: s.optional("xi")?,
    };
    let r = run_price_adjustment(&days, &config, insertion)?;
    out.with("adjusted.csv", |f| write_adjusted_csv(&r.series, f))?;

    let e = &r.elasticity;
    let rows = (0..e.xi.len()).map(|t| {
        let f = e.fits.get(t).copied().flatten();
        (
            t,
            e.xi[t],
            f.map(|f| f.slope),
            f.map(|f| f.intercept),
            f.map(|f| f.r_squared),
            e.residuals.get(t).copied(),
        )
    });
    out.table(
        "elasticity.csv",
        &["day", "xi", "slope", "intercept", "r_squared", "residual"],
        rows,
    )?;
    out.with("fills.csv", |f| write_fills_csv(&r.fills, f))?;

    let last = r.series.days.last();
    out.json(
        "summary.json",
        &json!({
            "data_days": days.len(),
            "days": r.series.days.len(),
            "insertion_day": insertion,
            "window": e.window,
            "degenerate_windows": e.degenerate_days(),
            "fills": r.fills.len(),
            "final_cash": r.final_cash,
            "final_inventory": r.final_inventory,
            "final_s": last.map(|d| d.s),
            "final_s_hat": last.map(|d| d.s_hat),
            "final_scale": last.map(|d| d.scale),
        }),
    )
}
