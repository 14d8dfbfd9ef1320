//! LWR traffic simulation on networks with the Fast Lax-Hopf link solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod components;
pub mod engine;
pub mod flh;
pub mod fundamental_diagram;
pub mod harness;
pub mod io;
pub mod junction;
pub mod network;
pub mod par;
pub mod scenario;
pub mod value_conditions;
