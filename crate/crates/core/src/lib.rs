//! Threshold ordering policies, Monte Carlo demand propagation and
//! discrete-time simulation for multi-echelon supply networks.

pub mod demand;
pub mod network;
pub mod policy;
pub mod propagation;
pub mod rng;
pub mod simulator;
pub mod scenario;
