//! Censoring-aware evaluation of binary risk models: IPCW metrics,
//! calibration, net benefit and decision curves, fairness-regularized
//! training and the analytic simulation of subgroup miscalibration.

pub mod censoring;
pub mod cli;
pub mod cohort;
pub mod decision;
pub mod math;
pub mod metrics;
pub mod sim;
pub mod train;
