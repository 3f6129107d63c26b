//! Explicit R-invariant contact forms on surfaces, built chart by chart from
//! Morse or dividing-set data and certified by dense sampling.

// `!(a < b)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod cli;
pub mod contact_verify;
pub mod corpus;
pub mod foliation_trace;
pub mod gauss_degree;
pub mod local_models;
pub mod morse_spec;
