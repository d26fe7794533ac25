//! Desk-scale distributed plane-wave DFT kernels.
//!
//! The crate models a cluster-style plane-wave DFT code on a single machine:
//! ranks are threads, messages are typed byte payloads, and the numerical
//! kernels (wavefunction repartitioning, grid-structured allreduce,
//! pseudopotential ring pipeline, subspace eigensolve) are the same ones a
//! production code distributes over MPI. Everything above the transport is
//! written against `send`/`recv`/`barrier`/`subgroup` only, so the collective
//! algorithms are exercised for real rather than delegated to a library.
//!
//! Module map:
//! - [`transport`]: rank worlds, typed point-to-point messaging, backends.
//! - [`layout`]: distributed matrices, in-place repartitioning between
//!   column-block and row-block partitions.
//! - [`collectives`]: baseline and multistage (grid) allreduce, plumbing.
//! - [`pseudo`]: nonlocal pseudopotential shards and the sliding-window ring.
//! - [`minidft`]: plane-wave grid, FFT, Hamiltonian, density, SCF loop.
//! - [`planner`]: process-count selection for the dense subspace solve.
//! - [`memmon`]: per-rank labeled memory ledger with high-water tracking.

pub mod collectives;
pub mod error;
pub mod layout;
pub mod memmon;
pub mod minidft;
pub mod partition;
pub mod planner;
pub mod pseudo;
pub mod transport;

pub use error::{Error, Result};
pub use num_complex::Complex64;
