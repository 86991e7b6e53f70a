// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoisers;
pub mod diffusion;
pub mod encoders;
pub mod eval;
pub mod cli;
pub mod data;
pub mod geometry;
pub mod numerics;
