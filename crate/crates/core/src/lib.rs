//! Confidence-variance reliability theory for pseudo-label selection.
//!
//! The crate is organised around the flow of a batch of predicted class
//! distributions:
//!
//! - [`stats`]: per-row maximum confidence (MC), residual-class variance
//!   (RCV) and the exact cross-entropy against the ideal target distribution.
//! - [`decomposition`]: second-order cross-entropy decomposition with
//!   certified remainder bounds, and the batch-level `MC + sRCV + Cov` split.
//! - [`pcos`]: the threshold-free spectral partitioner that turns (MC, RCV)
//!   statistics into soft reliability weights.
//! - [`baseline`]: fixed-threshold selection, ECE and per-class retention.
//! - [`simulator`]: seeded synthetic miscalibrated classifiers.
//! - [`io`], [`report`], [`cli`]: file formats, reports and the command line.

pub mod baseline;
pub mod cli;
pub mod decomposition;
pub mod error;
pub mod io;
pub mod pcos;
pub mod report;
pub mod simulator;
pub mod stats;
pub mod summation;

pub use error::{CovarError, Result};
pub use stats::{compute_stats, exact_ce, IdealDistribution, PredictionStats, ProbabilityBatch};
