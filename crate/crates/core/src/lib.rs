//! Exact and statistical machinery for the (1 - ζ_l)-power ranks of class
//! groups of cyclic degree-l number fields.
//!
//! The crate is organised bottom-up:
//!
//! * [`fl`]: exact linear algebra over the prime field F_l.
//! * [`chars`]: normalized l-th power residue characters χ_p and χ_l.
//! * [`redei`]: admissible supports, amalgamas, Redei matrices, boxes and
//!   generalized Redei assignments.
//! * [`modules`]: finite Z_l[ζ_l]-modules, Artin pairings, automorphism
//!   counts and the Cohen–Lenstra measure.
//! * [`matrix_model`]: rank statistics of random matrices over F_l.
//! * [`additive`]: l-additive systems and the cube differential.
//! * [`divisor`]: squarefree integers with restricted prime divisors.

pub mod additive;
pub mod chars;
pub mod divisor;
pub mod error;
pub mod fl;
pub mod matrix_model;
pub mod modules;
pub mod primes;
pub mod redei;
pub mod rng;

pub use error::{Error, Result};
pub use fl::{FlMatrix, FlScalar, FlSubspace, Modulus};
