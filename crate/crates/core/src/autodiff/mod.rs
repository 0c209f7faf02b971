//! Dense math and differentiation: forward-mode UV tangents recorded on a
//! reverse-mode tape, giving exact gradients of losses built from Jacobians.

pub mod dual;
pub mod kernels;
pub mod mlp;
pub mod params;
pub mod tape;

pub use dual::{DualValue, Jacobian3x2};
pub use mlp::{Activation, DualBatch, DualNodes, Mlp};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
