//! Simulation framework for fair federated optimization.
//!
//! The crate implements the q-FFL objective `sum_k p_k F_k^{q+1} / (q + 1)`
//! over linear models together with its solvers (FedAvg, q-FedSGD,
//! q-FedAvg and a non-stochastic AFL baseline), a synthetic heterogeneous
//! data generator, fairness statistics over per-device accuracies and a
//! multi-seed sweep harness. Everything is deterministic given a seed.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod rngdet;
pub mod solvers;

pub use error::{Error, Result};
