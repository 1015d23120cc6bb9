#![no_std]
//! Adversarial motion-blur synthesis against template trackers.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation: dense image containers, bilinear warping with analytic
//! gradients, a small reverse-mode tape, Horn–Schunck flow, the
//! flow-guided blur synthesizer, a normalized cross-correlation tracker,
//! the iterative (OP-ABA) and one-step (OS-ABA) blur attacks, and the
//! synthetic benchmark with its precision / success metrics.
//!
//! File formats, the CLI and anything touching the OS live in the `aba`
//! companion crate.

extern crate alloc;

pub mod attack_op;
pub mod attack_os;
pub mod bench;
pub mod blur;
mod error;
pub mod flow;
pub mod numerics;
pub mod tracker;

pub use error::{Error, Result};
pub use numerics::{FlowField, Frame, Tensor};
