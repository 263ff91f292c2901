//! Avellaneda-Stoikov quotes.
//!
//! The market maker quotes `bid = s - delta_b` and `ask = s + delta_a` around
//! the mid `s`, skewed by inventory through the reservation price
//!
//! ```text
//! r = s - q * gamma * sigma^2 * (T - t)
//! ```
//!
//! Two fill-intensity models are supported:
//!
//! ```text
//! classical:  lambda(delta) = A * exp(-kappa * delta)
//! informal:   lambda(delta) = (Lambda / alpha) * exp(-alpha * exp(K * delta))
//! ```
//!
//! The classical model has closed-form offsets
//! `delta = ±q*gamma*sigma^2*(T-t) + (1/gamma) ln(1 + gamma/kappa)`.
//! Under the informal model each offset solves
//!
//! ```text
//! delta = ±q*gamma*sigma^2*(T-t) + (1/gamma) ln(1 + gamma / (alpha*K*exp(K*delta)))
//! ```
//!
//! whose right-hand side is decreasing in `delta`, so the root is unique.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Configuration used for the informal USD/CUP market.
pub mod defaults {
    pub const GAMMA: f64 = 0.1;
    pub const K: f64 = 0.55;
    /// Magnitude of the reported order-size decay rate, 1/USD.
    pub const ALPHA: f64 = 8.87e-5;
    /// CUP per sqrt(day).
    pub const SIGMA: f64 = 2.38;
    /// CUP.
    pub const INITIAL_CASH: f64 = 1.0e5;
    pub const INITIAL_INVENTORY: f64 = 0.0;
}

/// Largest residual `|delta - RHS(delta)|` accepted from the solver.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuoteError {
    #[error("invalid quote parameters: {0}")]
    InvalidParams(String),
    #[error("operation needs the {0} intensity model")]
    WrongModel(&'static str),
    #[error(
        "no admissible root for {side} offset: g(0) = {g_lo:e}, g({hi}) = {g_hi:e} (skew {skew})"
    )]
    NoAdmissibleRoot {
        side: &'static str,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
        skew: f64,
    },
    #[error("{side} offset residual {residual:e} exceeds tolerance")]
    Residual { side: &'static str, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Intensity {
    Classical { a: f64, kappa: f64 },
    Informal { lambda: f64, alpha: f64, k: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Upper end of the root bracket; `None` means `50 / K`.
    pub delta_max: Option<f64>,
    /// Damped fixed-point sweeps before switching to Newton.
    pub damped_iterations: usize,
    pub newton_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            delta_max: None,
            damped_iterations: 24,
            newton_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteParams {
    /// CARA risk aversion.
    pub gamma: f64,
    /// Mid-price volatility, CUP per sqrt(day).
    pub sigma: f64,
    /// Terminal time `T`, days.
    pub horizon: f64,
    /// Current time `t` in `[0, T]`.
    pub time: f64,
    pub intensity: Intensity,
    /// Use `2/gamma` per side in the classical offsets instead of `1/gamma`.
    pub legacy_spread: bool,
    pub solver: SolverSettings,
}

impl QuoteParams {
    pub fn new(gamma: f64, sigma: f64, intensity: Intensity) -> Self {
        Self {
            gamma,
            sigma,
            horizon: 1.0,
            time: 0.0,
            intensity,
            legacy_spread: false,
            solver: SolverSettings::default(),
        }
    }

    pub fn classical(gamma: f64, sigma: f64, a: f64, kappa: f64) -> Self {
        Self::new(gamma, sigma, Intensity::Classical { a, kappa })
    }

    pub fn informal(gamma: f64, sigma: f64, lambda: f64, alpha: f64, k: f64) -> Self {
        Self::new(gamma, sigma, Intensity::Informal { lambda, alpha, k })
    }

    pub fn at(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn remaining(&self) -> f64 {
        self.horizon - self.time
    }

    /// Inventory skew `q * gamma * sigma^2 * (T - t)`.
    pub fn skew(&self, q: f64) -> f64 {
        q * self.gamma * self.sigma * self.sigma * self.remaining()
    }

    pub fn validate(&self) -> Result<(), QuoteError> {
        let bad = |m: String| Err(QuoteError::InvalidParams(m));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.gamma) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !pos(self.horizon) || !(self.time >= 0.0 && self.time <= self.horizon) {
            return bad(format!(
                "need 0 <= t <= T with T > 0, got t = {}, T = {}",
                self.time, self.horizon
            ));
        }
        match self.intensity {
            Intensity::Classical { a, kappa } if !(pos(a) && pos(kappa)) => {
                bad(format!("A and kappa must be positive, got {a}, {kappa}"))
            }
            Intensity::Informal { lambda, alpha, k } if !(pos(lambda) && pos(alpha) && pos(k)) => {
                bad(format!(
                    "Lambda, alpha and K must be positive, got {lambda}, {alpha}, {k}"
                ))
            }
            _ => Ok(()),
        }
    }
}

pub fn reservation_price(s: f64, q: f64, params: &QuoteParams) -> f64 {
    s - params.skew(q)
}

/// Fill rate of a quote `delta` away from the mid.
pub fn intensity(delta: f64, params: &QuoteParams) -> f64 {
    match params.intensity {
        Intensity::Classical { a, kappa } => a * (-kappa * delta).exp(),
        Intensity::Informal { lambda, alpha, k } => {
            lambda / alpha * (-alpha * (k * delta).exp()).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offsets {
    pub delta_b: f64,
    pub delta_a: f64,
}

impl Offsets {
    pub fn spread(&self) -> f64 {
        self.delta_b + self.delta_a
    }
}

pub fn closed_form_deltas(q: f64, params: &QuoteParams) -> Result<Offsets, QuoteError> {
    params.validate()?;
    let Intensity::Classical { kappa, .. } = params.intensity else {
        return Err(QuoteError::WrongModel("classical"));
    };
    let coeff = if params.legacy_spread { 2.0 } else { 1.0 };
    let half = coeff / params.gamma * (params.gamma / kappa).ln_1p();
    let skew = params.skew(q);
    Ok(Offsets {
        delta_b: skew + half,
        delta_a: -skew + half,
    })
}

/// Root of one informal-model offset equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub delta: f64,
    /// `|delta - RHS(delta)|` at the returned value.
    pub residual: f64,
    /// The fixed point was negative and the offset was clamped to zero.
    pub clamped: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformalRoots {
    pub bid: Root,
    pub ask: Root,
}

impl InformalRoots {
    pub fn offsets(&self) -> Offsets {
        Offsets {
            delta_b: self.bid.delta,
            delta_a: self.ask.delta,
        }
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The equation `delta = skew + (1/gamma) ln(1 + gamma/(alpha K e^{K delta}))`
/// written as `g(delta) = delta - skew - h(delta) = 0`.
#[derive(Debug, Clone, Copy)]
struct OffsetEquation {
    skew: f64,
    gamma: f64,
    k: f64,
    // ln(gamma / (alpha K))
    log_ratio: f64,
}

impl OffsetEquation {
    fn h(&self, delta: f64) -> f64 {
        softplus(self.log_ratio - self.k * delta) / self.gamma
    }

    fn rhs(&self, delta: f64) -> f64 {
        self.skew + self.h(delta)
    }

    fn g(&self, delta: f64) -> f64 {
        delta - self.rhs(delta)
    }

    /// `g'(delta) = 1 + (K/gamma) sigmoid(z) >= 1`.
    fn dg(&self, delta: f64) -> f64 {
        1.0 + self.k / self.gamma * sigmoid(self.log_ratio - self.k * delta)
    }

    fn solve(&self, side: &'static str, settings: &SolverSettings) -> Result<Root, QuoteError> {
        let hi_limit = settings.delta_max.unwrap_or(50.0 / self.k);
        let g0 = self.g(0.0);
        if g0 >= 0.0 {
            if g0 > 0.0 {
                log::warn!(
                    "{side} offset fixed point is negative (skew {}); clamping to 0",
                    self.skew
                );
            }
            return Ok(Root {
                delta: 0.0,
                residual: g0.abs(),
                clamped: g0 > 0.0,
                iterations: 0,
            });
        }
        let g_hi = self.g(hi_limit);
        if !(g_hi >= 0.0) {
            return Err(QuoteError::NoAdmissibleRoot {
                side,
                hi: hi_limit,
                g_lo: g0,
                g_hi,
                skew: self.skew,
            });
        }

        let (mut lo, mut hi) = (0.0, hi_limit);
        // The root exceeds the skew since h > 0; the damped map below is
        // monotone from under the root.
        let mut delta = self.skew.clamp(lo, hi);
        let omega = 1.0 / (1.0 + self.k / self.gamma);
        let target = 0.01 * RESIDUAL_TOLERANCE;
        let mut iterations = 0;
        let mut g = self.g(delta);

        while iterations < settings.damped_iterations && g.abs() > target {
            if g < 0.0 {
                lo = delta;
            } else {
                hi = delta;
            }
            delta = (delta - omega * g).clamp(lo, hi);
            g = self.g(delta);
            iterations += 1;
        }

        let mut newton = 0;
        while g.abs() > target && newton < settings.newton_iterations {
            if g < 0.0 {
                lo = delta;
            } else {
                hi = delta;
            }
            let mut next = delta - g / self.dg(delta);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == delta {
                break;
            }
            delta = next;
            g = self.g(delta);
            newton += 1;
        }
        iterations += newton;

        let residual = g.abs();
        if residual > RESIDUAL_TOLERANCE {
            return Err(QuoteError::Residual { side, residual });
        }
        Ok(Root {
            delta,
            residual,
            clamped: false,
            iterations,
        })
    }
}

/// Solves the bid and ask offsets under the informal intensity.
///
/// Each root lies in `[0, delta_max]`. A negative fixed point (strong
/// inventory skew) is clamped to zero and flagged on the returned [`Root`].
pub fn solve_informal_deltas(q: f64, params: &QuoteParams) -> Result<InformalRoots, QuoteError> {
    params.validate()?;
    let Intensity::Informal { alpha, k, .. } = params.intensity else {
        return Err(QuoteError::WrongModel("informal"));
    };
    let skew = params.skew(q);
    let eq = |skew| OffsetEquation {
        skew,
        gamma: params.gamma,
        k,
        log_ratio: (params.gamma / (alpha * k)).ln(),
    };
    Ok(InformalRoots {
        bid: eq(skew).solve("bid", &params.solver)?,
        ask: eq(-skew).solve("ask", &params.solver)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotePair {
    pub t: f64,
    pub s: f64,
    pub q: f64,
    /// Reservation price.
    pub r: f64,
    pub delta_b: f64,
    pub delta_a: f64,
    pub bid: f64,
    pub ask: f64,
    pub residual_b: f64,
    pub residual_a: f64,
}

/// Quotes around mid `s` at time `t` for inventory `q` (in lots).
pub fn quotes(s: f64, q: f64, t: f64, params: &QuoteParams) -> Result<QuotePair, QuoteError> {
    let params = params.at(t);
    let (offsets, residual_b, residual_a) = match params.intensity {
        Intensity::Classical { .. } => (closed_form_deltas(q, &params)?, 0.0, 0.0),
        Intensity::Informal { .. } => {
            let roots = solve_informal_deltas(q, &params)?;
            (roots.offsets(), roots.bid.residual, roots.ask.residual)
        }
    };
    Ok(QuotePair {
        t,
        s,
        q,
        r: reservation_price(s, q, &params),
        delta_b: offsets.delta_b,
        delta_a: offsets.delta_a,
        bid: s - offsets.delta_b,
        ask: s + offsets.delta_a,
        residual_b,
        residual_a,
    })
}

/// Writes `t,s,q,r,delta_b,delta_a,bid,ask,residual_b,residual_a`.
pub fn write_quote_trace<W: Write>(rows: &[QuotePair], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
