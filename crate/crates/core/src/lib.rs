//! Principal-agent contracting with agents who may quit.
//!
//! The principal's value with at most `n` quits solves a family of HJB
//! equations on moving domains `L̲ᶿ_t < x ≤ L̄ᶿ_t`, one per agent type, coupled
//! through the value of re-hiring. This crate solves them with a monotone
//! finite-difference scheme, iterates the coupling to a fixed point, extracts
//! feedback contracts and checks them by simulating chains of agents.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod error;
pub mod hjb;
pub mod io;
pub mod market;
pub mod policy;
pub mod recursion;
pub mod run;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
