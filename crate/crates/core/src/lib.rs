//! Calibration checks for probabilistic forecasters.
//!
//! A check is assembled from four interchangeable slots:
//!
//! | Slot          | Module       | Choices                                              |
//! |---------------|--------------|------------------------------------------------------|
//! | Model & data  | [`dist`]     | Gaussian, multivariate Gaussian, parametric, particles, set providers |
//! | Metric        | [`metric`]   | coverage counts, PIT / folded PIT, half-plane probes |
//! | Hypothesis    | [`hyptest`]  | two-sided, one-sided (over-confidence), tolerance ε  |
//! | Testing       | [`hyptest`], [`seqtest`] | Binomial + Bonferroni/Holm, KS bands, e-value martingales |
//!
//! [`pipeline`] wires the slots together through a by-name strategy
//! registry and ends every run in a single accept/reject decision.
//! [`sim`] holds the synthetic weather and robot-localization generators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod hyptest;
pub mod metric;
pub mod pipeline;
pub mod seqtest;
pub mod sim;

pub use error::{Error, Result};
