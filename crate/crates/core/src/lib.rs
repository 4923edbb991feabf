//! Map-based experience replay for continuous-control reinforcement learning.
//!
//! The centerpiece is [`GwrMap`]: a grow-when-required self-organizing network
//! that merges similar visited states into nodes and stores transitions on
//! directed temporal edges carrying traversal counts and averaged actions and
//! rewards. Sampling walks the graph instead of replaying raw tuples, which
//! shrinks the memory footprint at a controllable cost in fidelity.
//!
//! Around the map the crate provides:
//!
//! - [`FifoBuffer`], the conventional ring-buffer replay memory used as the
//!   baseline, behind the shared [`ReplayMemory`] abstraction;
//! - [`neural`] and [`ddpg`], a small feedforward stack with analytic
//!   gradients and a deterministic-policy-gradient agent that consumes batches
//!   from either memory;
//! - [`envs`], seedable desk-scale continuous-control environments;
//! - [`harness`], an experiment runner with threshold sweeps, CSV metrics,
//!   and SVG reports.

pub mod ddpg;
pub mod envs;
pub mod error;
pub mod gwr;
pub mod harness;
pub mod neural;
pub mod replay;

pub use ddpg::{AgentConfig, DdpgAgent, Losses};
pub use envs::{make_env, EnvSpec, Environment};
pub use error::{Error, Result};
pub use gwr::{
    AddKind, AddOutcome, GwrMap, GwrNode, GwrParams, MapSnapshot, NodeId, SampleMode,
};
pub use neural::{Adam, MlpNet, OutputActivation};
pub use replay::{FifoBuffer, ReplayBatch, ReplayMemory, Transition};
