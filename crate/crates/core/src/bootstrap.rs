//! With-replacement resampling of daily order flow.
//!
//! Every replicate draws each day independently from its own ChaCha stream
//! keyed by `(seed, replicate, day)`, so results do not depend on how
//! replicates are scheduled across threads.

use std::fmt::Display;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DayPartition;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BootstrapError {
    #[error("cannot resample an empty day ({0})")]
    EmptyDay(NaiveDate),
    #[error("a plan needs at least one replicate")]
    NoReplicates,
    #[error("day {0} is in the plan scope but not in the data")]
    MissingDay(NaiveDate),
    #[error("replicate index {0} does not fit in 32 bits")]
    ReplicateOverflow(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatePlan {
    pub seed: u64,
    pub n_replicates: usize,
    pub scope: Vec<NaiveDate>,
}

impl ReplicatePlan {
    pub fn new(seed: u64, n_replicates: usize, scope: Vec<NaiveDate>) -> Result<Self, BootstrapError> {
        let plan = Self {
            seed,
            n_replicates,
            scope,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan covering every day of `days`.
    pub fn over(seed: u64, n_replicates: usize, days: &[DayPartition]) -> Result<Self, BootstrapError> {
        Self::new(seed, n_replicates, days.iter().map(|d| d.day).collect())
    }

    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.n_replicates == 0 {
            return Err(BootstrapError::NoReplicates);
        }
        if self.n_replicates > u32::MAX as usize + 1 {
            return Err(BootstrapError::ReplicateOverflow(self.n_replicates - 1));
        }
        Ok(())
    }
}

/// Independent stream for one (replicate, day) pair.
pub fn rng_for(seed: u64, replicate: u32, day: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 32) | day as u64);
    rng
}

/// Indices of a same-size draw with replacement from `0..n`.
pub fn draw_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Same-size resample of one day. Drawn orders keep their timestamps; the
/// output is sorted by `(timestamp, original id)` and renumbered `0..n`.
pub fn resample_day<R: Rng + ?Sized>(part: &DayPartition, rng: &mut R) -> Result<DayPartition, BootstrapError> {
    if part.orders.is_empty() {
        return Err(BootstrapError::EmptyDay(part.day));
    }
    let mut orders: Vec<_> = draw_indices(part.orders.len(), rng)
        .into_iter()
        .map(|i| part.orders[i].clone())
        .collect();
    orders.sort_by_key(|o| (o.timestamp, o.id));
    for (id, o) in orders.iter_mut().enumerate() {
        o.id = id as u64;
    }
    Ok(DayPartition {
        day: part.day,
        orders,
    })
}

/// Makes ids unique across consecutive days, numbering from `start`.
pub fn renumber(days: &mut [DayPartition], start: u64) {
    for (id, o) in (start..).zip(days.iter_mut().flat_map(|d| d.orders.iter_mut())) {
        o.id = id;
    }
}

/// Resampled flow for one replicate over the plan scope, with ids unique
/// across days.
pub fn resample_days(
    plan: &ReplicatePlan,
    replicate: usize,
    days: &[DayPartition],
) -> Result<Vec<DayPartition>, BootstrapError> {
    let rep = u32::try_from(replicate).map_err(|_| BootstrapError::ReplicateOverflow(replicate))?;
    let mut out = Vec::with_capacity(plan.scope.len());
    for (index, date) in plan.scope.iter().enumerate() {
        let part = days
            .iter()
            .find(|d| d.day == *date)
            .ok_or(BootstrapError::MissingDay(*date))?;
        let mut rng = rng_for(plan.seed, rep, index as u32);
        out.push(resample_day(part, &mut rng)?);
    }
    renumber(&mut out, 0);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome<T> {
    pub index: usize,
    pub result: Result<T, String>,
}

/// Runs `pipeline` on every replicate in parallel. Results come back in
/// replicate order; a failing replicate is recorded and the rest continue.
pub fn run_replicates<T, E, F>(
    plan: &ReplicatePlan,
    days: &[DayPartition],
    pipeline: F,
) -> Vec<ReplicateOutcome<T>>
where
    T: Send,
    E: Display,
    F: Fn(usize, Vec<DayPartition>) -> Result<T, E> + Sync,
{
    (0..plan.n_replicates)
        .into_par_iter()
        .map(|index| {
            let result = resample_days(plan, index, days)
                .map_err(|e| e.to_string())
                .and_then(|flow| pipeline(index, flow).map_err(|e| e.to_string()));
            if let Err(e) = &result {
                log::warn!("replicate {index} failed: {e}");
            }
            ReplicateOutcome { index, result }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateStatus {
    pub index: usize,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateManifest {
    pub seed: u64,
    pub n: usize,
    pub scope: Vec<NaiveDate>,
    pub replicates: Vec<ReplicateStatus>,
}

impl ReplicateManifest {
    pub fn new<T>(plan: &ReplicatePlan, outcomes: &[ReplicateOutcome<T>]) -> Self {
        Self {
            seed: plan.seed,
            n: plan.n_replicates,
            scope: plan.scope.clone(),
            replicates: outcomes
                .iter()
                .map(|o| ReplicateStatus {
                    index: o.index,
                    ok: o.result.is_ok(),
                    error: o.result.as_ref().err().cloned(),
                })
                .collect(),
        }
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| !r.ok).count()
    }
}
