//! Queue-aware uplink power control in the mean-field regime.
//!
//! Users sit on a GOOD/BAD fading channel with a small packet buffer and
//! transmit at the minimal power meeting an SINR threshold. The crate covers
//! the per-user model, the transition kernels and drift matrix of the fluid
//! limit, its controlled equilibria, the threshold policy that reaches the
//! optimal one, and the exact finite-population MDP used as a baseline.

pub mod bench;
pub mod equilibrium;
pub mod error;
pub mod finite;
pub mod fluid;
pub mod kernel;
pub mod model;
pub mod threshold;

pub use equilibrium::{optimal_equilibrium, EquilibriumReport, Regime};
pub use error::{Assumption, Error, Result};
pub use model::{ChannelLaw, ControlProfile, Measure, ModelParams, StateIndex};
pub use threshold::{make_policy, Pairing, ThresholdPolicy};
