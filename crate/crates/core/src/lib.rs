//! Sandwich batch normalization and friends.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! normalization layer family ([`norm`]), training objectives and the PGD
//! attacker ([`losses`]), a DARTS-style supernet ([`supernet`]), gradient
//! diagnostics ([`diagnostics`]), synthetic data ([`data`]) and the toy
//! experiment harness ([`harness`]).

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod losses;
pub mod norm;
pub mod params;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Tensor, Var};
