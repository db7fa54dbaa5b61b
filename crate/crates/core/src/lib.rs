//! Consensus curves for ensembles of SEIR-type epidemic trajectories.
//!
//! Each input trajectory contributes its exposed/infectious pair `(E, I)`,
//! viewed as a point of the product Sobolev space `H¹ × H¹`. The consensus is
//! the constrained power Fréchet mean of the (time-shifted) inputs, subject to
//! `I' = σE − γI`, non-negativity and the population cap. The full
//! `(S, E, I, R)` state and a transmission rate are recovered afterwards.
//!
//! Pipeline: [`epi`] simulates inputs, [`basis`] and [`fspace`] give the
//! finite-dimensional representation, [`consensus`] solves the problem with
//! [`qp`] as the inner solver, and [`recovery`] rebuilds the full state.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod basis;
pub mod consensus;
pub mod epi;
pub mod error;
pub mod experiments;
pub mod fspace;
pub mod io;
pub mod optim;
pub mod plot;
pub mod qp;
pub mod recovery;

pub use error::{Error, Result};
