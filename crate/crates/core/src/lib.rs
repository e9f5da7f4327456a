//! Core pipeline for anomaly classification on cloud KPI time series:
//! series handling, window-to-graph conversion, the TELESTO graph neural
//! network with GCN/GIN baselines, and a leave-one-group-out training and
//! evaluation harness.

pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod container;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod series;
pub mod split;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
