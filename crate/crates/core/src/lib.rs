//! Sparse mean-variance portfolio selection.
//!
//! The pipeline separates inference from the decision. A posterior over the
//! return moments `(μ, Σ)` comes from one of three models (see
//! [`posterior`]). Integrating the penalized Markowitz loss over that
//! posterior leaves a nonnegative lasso in the posterior means
//! ([`objective`], [`solver`]). The penalty λ is then picked by comparing
//! posterior Sharpe ratios along the solution path against the uncertainty
//! band of the densest portfolio ([`selection`]). [`backtest`] runs the
//! whole procedure month by month out of sample.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod error;
pub mod linalg;
pub mod market_data;
pub mod objective;
pub mod posterior;
pub mod rng;
pub mod selection;
pub mod solver;

pub use error::{Error, ErrorClass, Result};
