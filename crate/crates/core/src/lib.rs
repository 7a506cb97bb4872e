#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod grid;
pub mod kernel;
pub mod integrator;
pub mod particles;
pub mod cli_io;
