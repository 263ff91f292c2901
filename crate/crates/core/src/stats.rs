//! Empirical statistics of a replayed book: daily candles and execution
//! ratios, relative spreads and distances, exponential fits, volume profiles,
//! order-size tails, the price response to market orders and the intensity
//! calibration consumed by the quoting model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookSnapshot, DayReplay, MarketOrder};
use crate::ingest::Side;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample {index} is not strictly positive ({value})")]
    NonPositiveSample { index: usize, value: f64 },
    #[error("insufficient support: {nonempty} nonempty bins, need at least 2")]
    InsufficientSupport { nonempty: usize },
    #[error("no executions to calibrate from")]
    NoExecutions,
    #[error("no snapshot with a nonempty {0:?} side")]
    EmptyProfile(Side),
    #[error("bucket edges must be finite, nonnegative and strictly increasing")]
    BadBuckets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ohlc {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl Ohlc {
    /// Candle over prices in time order; `None` for an empty sequence.
    pub fn from_prices<I: IntoIterator<Item = f64>>(prices: I) -> Option<Ohlc> {
        let mut iter = prices.into_iter();
        let first = iter.next()?;
        let mut c = Ohlc {
            open: first,
            high: first,
            low: first,
            close: first,
        };
        for p in iter {
            c.high = c.high.max(p);
            c.low = c.low.min(p);
            c.close = p;
        }
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyStats {
    pub day: chrono::NaiveDate,
    /// Execution prices; absent on days without trades.
    pub ohlc: Option<Ohlc>,
    pub executed_volume: f64,
    pub submitted_volume: f64,
    /// `executed / submitted`; absent when nothing was submitted.
    pub execution_ratio: Option<f64>,
    /// Mean of `s/m` over the day's snapshots with a defined mid.
    pub mean_relative_spread: Option<f64>,
    /// Mean of `d/m` over the day's bid placements.
    pub mean_relative_distance_bid: Option<f64>,
    pub mean_relative_distance_ask: Option<f64>,
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn daily_stats(day: &DayReplay) -> DailyStats {
    let executed_volume = day.executed_volume();
    let relative_distance = |side: Side| {
        mean(day.placements.iter().filter(|p| p.side == side).filter_map(|p| {
            let mid = day.snapshots.get(p.event)?.mid?;
            Some(p.distance / mid)
        }))
    };
    DailyStats {
        day: day.day,
        ohlc: Ohlc::from_prices(day.executions.iter().map(|e| e.price)),
        executed_volume,
        submitted_volume: day.submitted_volume,
        execution_ratio: (day.submitted_volume > 0.0).then(|| executed_volume / day.submitted_volume),
        mean_relative_spread: mean(
            day.snapshots
                .iter()
                .filter_map(|s| Some(s.spread? / s.mid?)),
        ),
        mean_relative_distance_bid: relative_distance(Side::Buy),
        mean_relative_distance_ask: relative_distance(Side::Sell),
    }
}

/// Maximum-likelihood exponential fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub rate: f64,
    pub n: usize,
    /// Kolmogorov-Smirnov distance between the sample and `Exp(rate)`.
    pub ks_stat: f64,
}

pub fn fit_exponential(samples: &[f64]) -> Result<ExpFit, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if let Some((index, &value)) = samples
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(StatsError::NonPositiveSample { index, value });
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let rate = 1.0 / mean;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let ks_stat = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = -(-rate * x).exp_m1();
            (cdf - i as f64 / nf).max((i + 1) as f64 / nf - cdf)
        })
        .fold(0.0_f64, f64::max)
        .min(1.0);
    Ok(ExpFit { rate, n, ks_stat })
}

/// Points of the empirical survival function `1 - F(x)` at each distinct
/// sample value, ascending in `x`.
pub fn ecdf_tail(sizes: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = sizes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let above = (sorted.len() - i - 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = above,
            _ => out.push((x, above)),
        }
    }
    out
}

/// Counts per bin `[edges[i], edges[i+1])`, last bin closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], edges: Vec<f64>) -> Histogram {
        let mut counts = vec![0usize; edges.len().saturating_sub(1)];
        for &v in values {
            if let Some(i) = bin_index(&edges, v) {
                counts[i] += 1;
            }
        }
        Histogram { edges, counts }
    }

    /// `n` equal-width bins spanning the data.
    pub fn linear(values: &[f64], n: usize) -> Histogram {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || n == 0 {
            return Histogram {
                edges: vec![],
                counts: vec![],
            };
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let mut edges: Vec<f64> = (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect();
        edges[n] = hi;
        Histogram::new(values, edges)
    }

    /// Normalized density per bin.
    pub fn density(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| {
                if total == 0 {
                    0.0
                } else {
                    c as f64 / (total as f64 * (w[1] - w[0]))
                }
            })
            .collect()
    }
}

fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let (first, last) = (*edges.first()?, *edges.last()?);
    if edges.len() < 2 || !(v >= first && v <= last) {
        return None;
    }
    if v == last {
        return Some(edges.len() - 2);
    }
    Some(edges.partition_point(|&e| e <= v) - 1)
}

/// How resting-volume distances are measured for a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceScale {
    /// CUP offset from the best price.
    Absolute,
    /// CUP offset divided by the concurrent mid (snapshots without one are skipped).
    RelativeToMid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucketing {
    pub edges: Vec<f64>,
    pub scale: DistanceScale,
}

impl Bucketing {
    pub fn new(edges: Vec<f64>, scale: DistanceScale) -> Result<Self, StatsError> {
        let ok = edges.len() >= 2
            && edges.iter().all(|e| e.is_finite() && *e >= 0.0)
            && edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self { edges, scale })
        } else {
            Err(StatsError::BadBuckets)
        }
    }

    pub fn linear(max: f64, n: usize, scale: DistanceScale) -> Result<Self, StatsError> {
        Self::new(
            (0..=n).map(|i| max * i as f64 / n as f64).collect(),
            scale,
        )
    }

    /// `[0, min)` followed by `n` log-spaced buckets up to `max`.
    pub fn log(min: f64, max: f64, n: usize, scale: DistanceScale) -> Result<Self, StatsError> {
        if !(min > 0.0 && max > min && n > 0) {
            return Err(StatsError::BadBuckets);
        }
        let ratio = (max / min).ln() / n as f64;
        let mut edges = vec![0.0];
        edges.extend((0..=n).map(|i| min * (ratio * i as f64).exp()));
        Self::new(edges, scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBucket {
    pub lower: f64,
    pub upper: f64,
    pub mean_relative_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    pub side: Side,
    pub buckets: Vec<ProfileBucket>,
    /// Snapshots that contributed.
    pub snapshots: usize,
}

/// Mean over snapshots of the share of one side's resting volume found at
/// each distance bucket.
pub fn volume_profile(
    snapshots: &[BookSnapshot],
    side: Side,
    bucketing: &Bucketing,
) -> Result<VolumeProfile, StatsError> {
    let nb = bucketing.edges.len() - 1;
    let mut sums = vec![0.0; nb];
    let mut used = 0usize;
    for snap in snapshots {
        let total = snap.total(side);
        let depth = snap.depth(side);
        if depth.is_empty() || total <= 0.0 {
            continue;
        }
        let norm = match bucketing.scale {
            DistanceScale::Absolute => 1.0,
            DistanceScale::RelativeToMid => match snap.mid {
                Some(m) => m,
                None => continue,
            },
        };
        used += 1;
        for level in depth {
            if let Some(i) = bin_index(&bucketing.edges, level.distance / norm) {
                sums[i] += level.volume / total;
            }
        }
    }
    if used == 0 {
        return Err(StatsError::EmptyProfile(side));
    }
    Ok(VolumeProfile {
        side,
        buckets: bucketing
            .edges
            .windows(2)
            .zip(sums)
            .map(|(w, s)| ProfileBucket {
                lower: w[0],
                upper: w[1],
                mean_relative_volume: s / used as f64,
            })
            .collect(),
        snapshots: used,
    })
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `None` when fewer than two points or `x` has no spread.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    // a flat response fitted exactly counts as a perfect fit
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_ln_q: f64,
    /// Mean of `eps * (m(t + tau) - m(t))`.
    pub mean_response: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactFit {
    /// Slope of the bin-mean response against `ln Q`.
    pub k: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub tau: usize,
    pub bins: Vec<ImpactBin>,
    pub observations: usize,
}

pub const DEFAULT_IMPACT_BINS: usize = 20;

/// Price response of market orders binned logarithmically by size.
///
/// `mids[k]` is the mid just before event `k`; a market order at event `k`
/// is scored with `eps * (mids[k + tau] - mids[k])`. Orders without both
/// mids are skipped.
pub fn price_impact(
    orders: &[MarketOrder],
    mids: &[Option<f64>],
    tau: usize,
    n_bins: usize,
) -> Result<ImpactFit, StatsError> {
    let obs: Vec<(f64, f64)> = orders
        .iter()
        .filter(|o| o.volume > 0.0)
        .filter_map(|o| {
            let before = (*mids.get(o.event)?)?;
            let after = (*mids.get(o.event.checked_add(tau)?)?)?;
            Some((o.volume.ln(), o.side.epsilon() * (after - before)))
        })
        .collect();
    let n_bins = n_bins.max(1);
    let lo = obs.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
    let hi = obs.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
    if obs.is_empty() || hi <= lo {
        return Err(StatsError::InsufficientSupport {
            nonempty: usize::from(!obs.is_empty()),
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let mut acc = vec![(0usize, 0.0, 0.0); n_bins];
    for &(lnq, resp) in &obs {
        let i = (((lnq - lo) / width) as usize).min(n_bins - 1);
        acc[i].0 += 1;
        acc[i].1 += lnq;
        acc[i].2 += resp;
    }
    let bins: Vec<ImpactBin> = acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(i, &(count, sx, sy))| ImpactBin {
            lower: (lo + width * i as f64).exp(),
            upper: (lo + width * (i + 1) as f64).exp(),
            count,
            mean_ln_q: sx / count as f64,
            mean_response: sy / count as f64,
        })
        .collect();
    let xs: Vec<f64> = bins.iter().map(|b| b.mean_ln_q).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.mean_response).collect();
    let fit = least_squares(&xs, &ys).ok_or(StatsError::InsufficientSupport {
        nonempty: bins.len(),
    })?;
    Ok(ImpactFit {
        k: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        tau,
        bins,
        observations: obs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityCalibration {
    /// Market orders per day, averaged across days with trades.
    pub lambda: f64,
    /// Decay rate of the market-order size distribution, 1/USD.
    pub alpha: f64,
    pub size_fit: ExpFit,
    pub days_used: usize,
}

/// Calibrates `(Lambda, alpha)` from market-order sizes grouped by day.
pub fn calibrate_intensity(daily_sizes: &[Vec<f64>]) -> Result<IntensityCalibration, StatsError> {
    let per_day: Vec<f64> = daily_sizes
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| d.len() as f64)
        .collect();
    if per_day.is_empty() {
        return Err(StatsError::NoExecutions);
    }
    let all: Vec<f64> = daily_sizes.iter().flatten().copied().collect();
    let size_fit = fit_exponential(&all)?;
    Ok(IntensityCalibration {
        lambda: per_day.iter().sum::<f64>() / per_day.len() as f64,
        alpha: size_fit.rate,
        size_fit,
        days_used: per_day.len(),
    })
}

/// Market-order sizes of each replayed day.
pub fn daily_market_order_sizes(days: &[DayReplay]) -> Vec<Vec<f64>> {
    days.iter()
        .map(|d| {
            crate::book::market_orders(d, 0)
                .into_iter()
                .map(|m| m.volume)
                .collect()
        })
        .collect()
}

/// Sizes of the resting remainders (limit orders) of each placement.
pub fn limit_order_sizes(days: &[DayReplay]) -> Vec<f64> {
    days.iter()
        .flat_map(|d| d.placements.iter().map(|p| p.volume))
        .collect()
}
