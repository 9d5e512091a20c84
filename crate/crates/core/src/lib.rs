//! Stokes graphs, fundamental solutions and zero loci of the standardized
//! polynomial Schrödinger equation `ψ'' = λ² W(z, λ) ψ` at high energy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branchcut;
pub mod cli;
pub mod error;
pub mod fundsol;
pub mod polyroots;
pub mod potential;
pub mod quad;
pub mod stokesgraph;
pub mod zeroloci;

pub use error::{Error, Result};
