#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod eval;
pub mod nn;
pub mod protocol;
pub mod sim;
pub mod train;
