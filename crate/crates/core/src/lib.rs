//! Informal currency markets modelled as limit order books.
//!
//! The crate replays declared buy/sell intentions through a price-time
//! priority book, measures the resulting microstructure, and simulates a
//! single Avellaneda-Stoikov market maker whose fill intensity follows the
//! exponential order-size law observed in such markets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjust;
pub mod book;
pub mod bootstrap;
pub mod ingest;
pub mod quoting;
pub mod simulation;
pub mod stats;

pub use book::{Book, BookSnapshot, Execution, RestingOrder};
pub use ingest::{DayPartition, OrderRecord, Side};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
