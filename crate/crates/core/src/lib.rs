//! Federated learning simulation with phase-synchronized (Kuramoto) server
//! aggregation, FedAvg/SCAFFOLD/FedProx baselines, and numerical checks of
//! the FedAvg descent inequality on quadratic instances.
//!
//! The crate is organised bottom-up:
//!
//! * [`numeric`]: flat parameter vectors and deterministic reductions.
//! * [`objectives`]: quadratic, logistic-regression and MLP losses with
//!   analytic gradients and the gradient-noise models.
//! * [`data`]: IDX loading, synthetic Gaussian clusters, label sharding.
//! * [`aggregation`]: FedAvg, Kuramoto weights, SCAFFOLD, FedProx.
//! * [`engine`]: the round loop, local SGD and per-round metrics.
//! * [`theory`]: Monte-Carlo variance decomposition, descent-bound and
//!   drift comparisons.
//!
//! Client work is spread over rayon when the `parallel` feature is on
//! (the default); see [`exec`].

pub mod aggregation;
pub mod data;
pub mod engine;
pub mod error;
pub mod exec;
pub mod numeric;
pub mod objectives;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use numeric::ParamVector;
