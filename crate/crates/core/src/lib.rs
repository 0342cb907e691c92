//! Stochastic variational inference for Bayesian structured additive
//! distributional regression.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod data;
pub mod evaluation;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod reference;
pub mod simgen;
pub mod variational;
