//! Axially expanded window (AEWin) self-attention and its hierarchical
//! vision backbone, together with the machinery that keeps it honest: a
//! dense masked-attention oracle, reverse-mode differentiation with
//! finite-difference checks, and exact complexity/parameter models.
//!
//! The crate is `no_std` (with `alloc`); everything is pure computation over
//! owned `f64` tensors with fixed reduction orders, so results are bitwise
//! reproducible. IO, file formats, and the command-line front end live in
//! the companion `aewin-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod attention;
pub mod error;
pub mod model;
pub mod oracle;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
