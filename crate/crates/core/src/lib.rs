//! Testing ε-controllability of systems known only through sampled
//! transitions `(x, u, x')`.
//!
//! A state is ε-controllable with respect to a target `x_T` when some input
//! sequence drives it into the closed ball `B(x_T, ε)`. Two tests are
//! provided:
//!
//! * [`mecs`] grows a tree of balls backwards from the target ball. Each
//!   ball's radius comes from a local Lipschitz bound ([`lipschitz`]), so
//!   every state in a tree ball provably reaches the target ball when the
//!   bounds hold.
//! * [`ferf`] fixes every radius at ε and reduces the question to
//!   reachability in a unit-weight graph.
//!
//! [`systems`] holds the benchmark simulators used to generate data and to
//! check results by rollout ([`analysis`]).

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod ferf;
pub mod lipschitz;
pub mod mecs;
pub mod neighbors;
pub mod seed;
pub mod space;
pub mod systems;

pub use dataset::{Bounds, Dataset, DatasetBounds, DatasetMeta};
pub use error::{Error, Result};
pub use space::{ball_contains, ball_subset, distance, ControlInput, State, StateBall, TransitionSample};
