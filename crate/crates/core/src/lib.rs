//! Numerical laboratory for the intermittent (LSV) map with a hole.
//!
//! Three independent engines compute the surviving mass of an open system:
//! exact interval arithmetic on survivor sets ([`survivor`]), a transfer
//! operator acting on densities with an `x^{-α}` singular factor
//! ([`density`]) and particle ensembles ([`monte_carlo`]). On top of these
//! sit the induced first-return map ([`induced`]), curve fitting and lemma
//! checks ([`rates`]), Cesàro averages for general open systems
//! ([`cesaro`]) and the experiment runner behind the `openlsv` binary
//! ([`runner`]).

pub mod cesaro;
pub mod density;
pub mod error;
pub mod induced;
pub mod map;
pub mod monte_carlo;
pub mod rates;
pub mod runner;
pub mod survivor;

pub use error::{Error, Result};
