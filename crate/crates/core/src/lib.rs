//! Two-server private and robust federated learning.
//!
//! Clients clip per-record gradients and their whole update, then send
//! additive shares to two non-colluding servers. The servers check each
//! update's norm bound under MPC, add independent Gaussian noise to their
//! accumulators, and open only the noisy aggregate.

pub mod accountant;
pub mod experiment;
pub mod ffield;
pub mod learn;
pub mod mpc;
pub mod protocol;
pub mod seed;
pub mod sharing;
pub mod transcript;
