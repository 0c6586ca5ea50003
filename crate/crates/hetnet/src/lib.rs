//! HetNet: heterogeneous graph attention communication for composite
//! multi-agent teams.
//!
//! Agents of different classes (different observation and action spaces)
//! exchange messages over a typed communication graph. Each class is a node
//! type, each (sender class, receiver class) pair is an edge type with its
//! own channel weights and attention vector, and a training-only state
//! summary node feeds the critic. Per-class policies are trained with an
//! on-policy heterogeneous actor-critic; at execution time the summary node
//! is dropped and agents act from purely local message passing.
//!
//! Crate layout:
//! - [`mat`], [`tape`], [`nn`]: double-precision matrix math and the
//!   reverse-mode tape the policy gradients run on.
//! - [`env`]: the predator-prey (PP) and predator-capture-prey (PCP)
//!   gridworlds plus a two-armed bandit used by the training sanity checks.
//! - [`hetgraph`]: per-timestep typed graph construction.
//! - [`hetgat`]: the heterogeneous graph attention layer.
//! - [`policy`]: feature preprocessing, the stacked network, critic heads.
//! - [`mahac`]: rollouts, returns, critic targets, the update step.
//! - [`harness`]: config, training/eval orchestration, metrics, checkpoints,
//!   plotting.

pub mod env;
pub mod harness;
pub mod hetgat;
pub mod hetgraph;
pub mod mahac;
pub mod mat;
pub mod nn;
pub mod policy;
pub mod tape;
pub mod util;
