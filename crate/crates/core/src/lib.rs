#![cfg_attr(not(test), no_std)]
//! Simulation kernel for stabilizer readout on a dual-species Rydberg array.
//!
//! A single ancilla atom (two levels: ground `g`, Rydberg `r`) sits among
//! data atoms (three levels: qubit states `0`, `1`, and Rydberg `r`) and
//! picks up one geometric phase flip per data atom in `1` during a
//! Ramsey-interleaved Rydberg pulse, so its survival fringe reads out the
//! parity of the surrounding qubits.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] — dense complex matrices and a Hermitian eigensolver,
//!   sized for tensor-product spaces of a few atoms;
//! * [`quantum`] — level spaces, pure/mixed states, operator embedding and
//!   the eigendecomposition-based propagator;
//! * [`system`] — atom geometry, van der Waals interaction tables and
//!   Hamiltonian assembly;
//! * [`pulse`] — geometric-phase formulas, interaction-compensated pulse
//!   solutions and readout sequence construction;
//! * [`dynamics`] — unitary and Lindblad evolution plus projective
//!   measurement with loss channels;
//! * [`noise`] — quasi-static shot noise, dephasing-rate calibration and
//!   the Monte Carlo driver;
//! * [`analysis`] — fringe fitting, bootstrap errors, parity summaries and
//!   operating-point selection;
//! * [`scenario`] — plain-data description of a runnable experiment.
//!
//! Everything here is `no_std + alloc`; IO, configuration files and the
//! command line live in the companion `stabsim-cli` crate.
//!
//! # Conventions
//!
//! * User-facing frequencies are ordinary frequencies in MHz, durations in
//!   microseconds. Hamiltonian matrices carry angular units (rad/us); the
//!   factor 2*pi is applied exactly once, inside
//!   [`system::AtomSystem::build_hamiltonian`].
//! * A drive detuning `delta` enters the Hamiltonian as `-delta |r><r|`, so a
//!   neighbouring Rydberg excitation with pair shift `v` moves an atom's
//!   effective detuning to `delta - v`.
//! * Site 0 is the ancilla and is the slowest-varying index of the tensor
//!   product; data atoms follow in row-major geometric order.

extern crate alloc;

pub mod analysis;
pub mod dynamics;
pub mod linalg;
pub mod noise;
pub mod pulse;
pub mod quantum;
mod rand_util;
pub mod scenario;
pub mod system;

pub use num_complex::Complex64 as C64;
