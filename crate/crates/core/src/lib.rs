//! Profit-driven portfolio training.
//!
//! A forecaster emits one `tanh`-bounded output per stock (plus an optional
//! hold node). The outputs are turned into budget fractions and trade
//! directions by [`allocation::allocate`], scored by one of the four
//! portfolio losses in [`losses`], and the resulting day-by-day decisions
//! are replayed by [`backtest::run_backtest`].
//!
//! Module map:
//! - [`allocation`]: output vectors, the allocation head, the sign proxy.
//! - [`losses`]: the four loss families with analytic gradients.
//! - [`model`]: linear / MLP forecaster, Adam, seeded multi-restart training.
//! - [`data`]: panel CSV I/O, year-based splits, synthetic GBM markets.
//! - [`backtest`]: daily-rebalancing simulation, buy-and-hold, Mann-Whitney U.
//! - [`gradcheck`]: finite-difference gradient and invariant report.
//! - [`experiment`]: config files and the reproducible run pipeline.

pub mod allocation;
pub mod backtest;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;

pub use allocation::{allocate, sign_proxy, AllocationDecision, Direction, OutputVector};
pub use error::{Error, Result};
pub use losses::{LossConfig, LossEvaluation, LossVariant, SignalDelta, SignalSource};
