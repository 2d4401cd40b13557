//! Simulation and analysis of distributed clock synchronization over
//! switching network topologies.
//!
//! Every node `u` runs a local clock `tau_u = alpha_u * t + beta_u`. Nodes
//! estimate `(ln alpha_u, beta_u)` relative to one or more reference nodes from
//! noisy pairwise difference measurements, over a graph that changes every
//! iteration. The crate provides:
//!
//! - [`clock`]: the affine clock model and the iteration schedule that keeps
//!   every node's local window inside a common global interval.
//! - [`topology`]: graphs, grounded Laplacians and selector matrices, and the
//!   deterministic, Markov and random-waypoint switching processes.
//! - [`pairwise`]: the two-way timestamp exchange and its line-fit estimate.
//! - [`estimators`]: the DiSync, DiSync-I, JaT and JaT-I update laws.
//! - [`ats`]: the average-consensus virtual clock baseline.
//! - [`oracle`]: the steady-state bias predicted from the averaged matrices.
//! - [`harness`]: scenario files, Monte Carlo experiments, statistics and
//!   result files. The `disync` binary is a thin CLI over it.

pub mod clock;
pub mod topology;
pub mod pairwise;
pub mod estimators;
pub mod ats;
pub mod oracle;
pub mod harness;
