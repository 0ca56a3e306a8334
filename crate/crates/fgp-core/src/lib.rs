//! Construction and backtesting of trading strategies generated pathwise by
//! functionals of market weights.
//!
//! The crate is organized along the data flow:
//!
//! - [`marketpath`]: capitalization panels, market weights, refining
//!   partitions, realized covariation, and finite-variation companion paths
//!   (running extrema, moving averages, quadratic variation).
//! - [`funcalc`]: non-anticipative functional jets, numeric derivative
//!   checks, left-point pathwise integrals, the Gamma functional by its two
//!   equivalent routes, and the change-of-variable residual diagnostic.
//! - [`genlib`]: the catalog of concrete generating functionals with
//!   analytic jets and closed-form Gamma series.
//! - [`strategy`]: additive and multiplicative strategy series, portfolio
//!   weights, and arbitrage certificates.
//! - [`backtest`]: daily-rebalancing wealth replay and reports.
//! - [`synth`]: deterministic synthetic panels and an independent Gamma
//!   oracle for cross-validation.

pub mod backtest;
pub mod chart;
pub mod funcalc;
pub mod genlib;
pub mod marketpath;
pub mod mat;
pub mod strategy;
pub mod synth;
