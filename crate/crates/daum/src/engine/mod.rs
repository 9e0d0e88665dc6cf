//! Minimal dense-network computation engine.
//!
//! Affine layers, activations, exact backprop, SGD updates and the flattened
//! parameter representation shared by every model in the crate. 64-bit floats
//! throughout; all randomness is seed-driven.

mod gradcheck;
mod mlp;
mod param;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{logit, sigmoid, softplus, Activation, LayerSpec, Mlp, MlpBatchCache, MlpCache};
pub use param::{Layout, LayoutEntry, ParamVector};
