//! Meshfree Arbitrary-Lagrangian-Eulerian solver for the BGK model of the
//! Boltzmann equation.
//!
//! Grid points ("particles") move with the macroscopic gas velocity while
//! the residual transport (v - U) . grad f is discretized with weighted
//! least-squares generalized finite differences and a positive upwind
//! scheme. Time integration splits an explicit advection step from a
//! closed-form implicit BGK relaxation. Both the Chu-reduced two-dimensional
//! formulation and the full three-dimensional formulation are supported,
//! with a deterministic data-parallel backend and a driven-cavity
//! bench/profile harness.

pub mod cli_io;
pub mod error;
pub mod gfdm;
pub mod kinetic_core;
pub mod neighbor_search;
pub mod parallel_backend;
pub mod particle_mgmt;
pub mod phase_space;
pub mod solver;

pub use error::{Error, Result};
