//! Hypergraph-based forecasting and anomaly detection for multivariate
//! sensor streams.
//!
//! The pipeline learns a k-nearest-neighbor hypergraph over per-sensor
//! embeddings, encodes sliding windows with attention message passing and a
//! pooling/unpooling hierarchy, forecasts the next reading of every sensor,
//! scores deviations robustly against a validation baseline, expands a
//! root-cause neighborhood around the worst sensor, and searches for
//! corrective sensor values with a genetic algorithm.

pub mod config;
pub mod control;
pub mod conv;
pub mod detect;
pub mod diagnose;
pub mod hierarchy;
pub mod hypergraph;
pub mod model;
pub mod pipeline;
pub mod series;
pub mod synth;
pub mod tensor;
