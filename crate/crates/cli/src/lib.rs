//! IO, file formats, dataset generation, training, and the command
//! implementations behind the `aewin` binary.

pub mod commands;
pub mod container;
pub mod dataset;
pub mod specfile;
pub mod train;
