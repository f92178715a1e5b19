//! Fair update-rate allocation for sparse gossip networks.
//!
//! A source tracks a piece of information that changes as a Poisson process
//! and pushes updates to the nodes of a sparse directed gossip network. The
//! nodes forward their freshest version to their out-neighbours. This crate
//! searches for the split of the source's total update rate across nodes that
//! minimises the worst node's long-run version age, treating the network as a
//! black box that reports time-averaged ages.
//!
//! Modules:
//!
//! - [`topology`]: random sparse digraphs and gossip-rate assignment.
//! - [`sim`]: event-driven simulation of the version-age process.
//! - [`oracle`]: exact expected ages through the subset recursion.
//! - [`gp`]: Matérn Gaussian-process surrogate.
//! - [`bandit`]: the GP-UCB loop over the feasible allocation region.
//! - [`harness`]: experiment orchestration, statistics and CSV/JSON export.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the harness and CLI use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod error;
pub mod gp;
pub mod harness;
pub mod oracle;
pub mod scalar;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GossipNetwork = topology::GossipNetwork<f64>;
pub type TopologySpec = topology::TopologySpec<f64>;
pub type SimConfig = sim::SimConfig<f64>;
pub type AgeReport = sim::AgeReport<f64>;
pub type KernelParams = gp::KernelParams<f64>;
pub type SurrogateState = gp::SurrogateState<f64>;
pub type FeasibleRegion = bandit::FeasibleRegion<f64>;
pub type BanditConfig = bandit::BanditConfig<f64>;
pub type OptimizationTrace = bandit::OptimizationTrace<f64>;

pub type GossipNetworkF32 = topology::GossipNetwork<f32>;
pub type SurrogateStateF32 = gp::SurrogateState<f32>;
