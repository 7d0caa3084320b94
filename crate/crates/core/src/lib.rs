//! Split-federated-learning planner: cut-layer selection and bandwidth and
//! compute allocation for a fleet of heterogeneous devices.

pub mod baselines;
pub mod cost_models;
pub mod harness;
pub mod latency;
pub mod problem;
pub mod risk;
pub mod simulator;
pub mod solver;
