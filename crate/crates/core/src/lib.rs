//! Portfolio construction over voted stock universes.
//!
//! * [`market_data`]: price ingestion, weekly returns, moment estimation.
//! * [`universe`]: prompt rendering, chat replay/live clients, ticker voting
//!   and weight parsing.
//! * [`optimizer`]: bound-constrained mean-variance programs and frontiers.
//! * [`cardinality`]: exact cardinality-constrained frontiers by
//!   branch-and-bound, with an enumeration oracle.
//! * [`backtest`]: wealth curves, evaluation metrics, benchmarks, sectors.
//! * [`formats`]: the delimited text formats shared by the command line.

pub mod backtest;
pub mod cardinality;
pub mod error;
pub mod formats;
pub mod market_data;
pub mod optimizer;
pub mod universe;

pub use error::{BacktestError, DataError, FormatError, OptimizeError, UniverseError};
