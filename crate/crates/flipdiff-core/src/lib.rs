//! Numerical core for the flip-noise tight-binding model: lattice data, Markov
//! noise, Monte Carlo propagation, the Floquet-fibered augmented operators, the
//! spectral solvers built on them, and an exact small-system oracle.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augmented;
pub mod lattice;
pub mod linalg;
pub mod markov;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod simulate;
pub mod spectral;

pub use num_complex::Complex64 as C64;

pub(crate) const I: C64 = C64::new(0.0, 1.0);
