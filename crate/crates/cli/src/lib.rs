//! Command-line pipeline: universe voting, frontiers, cardinality
//! portfolios, backtests and plot data.

pub mod commands;
pub mod config;
pub mod fixtures;
pub mod strategy;
