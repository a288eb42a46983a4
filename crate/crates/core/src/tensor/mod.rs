//! Minimal deterministic differentiable-computation substrate.
//!
//! Everything is `f64` and single-threaded so that finite-difference checks
//! are tight and training is bit-reproducible for a fixed seed.

mod check;
pub mod math;
mod mlp;
mod optim;
mod store;
mod tape;

pub use check::{grad_check, GRAD_CHECK_FLOOR};
pub use mlp::{mlp_forward, mlp_forward_tape};
pub use optim::{optimizer_step, OptimState};
pub use store::{init_mlp, init_rng, mlp_param_count, GradientMap, GroupId, ParamGroup, ParameterStore};
pub use tape::{backward, NodeId, Tape, Tensor};
