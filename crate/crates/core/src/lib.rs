//! Joint energy-harvesting time and transmit power allocation for
//! device-to-device (D2D) pairs underlaying a wireless powered network.
//!
//! A multi-antenna power station (PS) beams energy to `N` single-antenna D2D
//! transmitters during a harvesting phase of length `tau0`; afterwards every
//! transmitter talks to its receiver simultaneously for `tau1 = 1 - tau0`,
//! spending only what it harvested. [`solver::solve`] maximizes the sum
//! throughput with a Dinkelbach outer loop over the ratio `sum_rate / t`
//! (`t = 1 / tau1`) and a difference-of-concave inner loop for the
//! interference-coupled power control.
//!
//! Modules:
//! - [`model`]: topology, fading channels, energy beamformer, SINR and throughput.
//! - [`solver`]: the fractional/D.C. allocator and its building blocks.
//! - [`baselines`]: TDMA harvest-then-transmit and omnidirectional energy transfer.
//! - [`oracle`]: brute-force and 1-D reference solvers for verification.
//! - [`harness`]: seeded Monte-Carlo sweeps, CSV output and summaries.
//! - [`io`]: the flat TOML text format for instances, reports and golden files.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Instance, SystemParams};
pub use solver::{solve, Allocation, SolverOptions, SolverReport, Termination};
