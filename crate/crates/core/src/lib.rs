#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod control;
pub mod cutoff;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod potential;
pub mod solver;
pub mod timeset;
