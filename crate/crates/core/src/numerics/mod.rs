//! Image and flow containers, bilinear warping, the differentiation tape
//! and finite-difference checking.

pub mod conv;
mod frame;
mod gradcheck;
mod tape;
mod warp;

pub use frame::{FlowField, Frame, Tensor, LUMA};
pub use gradcheck::{grad_check, numeric_gradient, relative_error};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use warp::{warp, warp_backward};

pub(crate) use tape::{bce, sigmoid};
pub(crate) use warp::{sample, warp_planes};
