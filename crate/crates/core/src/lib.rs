#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod inversion;
pub mod navigation;
pub mod operators;
pub mod simulator;
pub mod sparse_lsq;
pub mod statespace;
