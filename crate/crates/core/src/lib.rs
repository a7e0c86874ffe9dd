//! Gravitational N-body simulation with a learned acceleration surrogate.
//!
//! The crate is organised as a pipeline:
//!
//! - [`physics`]: softened pairwise gravity and the kick-drift-kick leapfrog integrator.
//! - [`scenarios`]: seeded initial-condition generators (spiral galaxy, disc, cloud, multi-disc).
//! - [`dataset`]: labelled per-frame learning data and the `NBDS` binary file format.
//! - [`graph`]: k-nearest-neighbour frame graphs backed by a kd-tree.
//! - [`nn`]: the small dense toolkit the model is built from (matrices, MLPs, LayerNorm, Adam).
//! - [`model`]: the EdgeConv surrogate, its backward pass and the `NBDM` checkpoint format.
//! - [`train`]: the minibatch Adam training loop and per-scene evaluation.
//! - [`rollout`]: closed-loop surrogate rollouts, error series and speedup benchmarks.

pub mod dataset;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod physics;
pub mod rollout;
pub mod scenarios;
pub mod train;

mod codec;

pub use error::{Error, Result};
pub use physics::{Frame, ParticleSet, PhysicsParams, Trace, Vec3};
