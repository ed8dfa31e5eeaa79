//! Finite-sample unbiased instrumental-variables estimation when the sign of
//! the first stage is known.
//!
//! The library is organised around the reduced-form sufficient statistic
//! [`ReducedFormStats`]: OLS reduced-form and first-stage coefficients
//! `(ξ₁, ξ₂)` together with their covariance `Σ`.
//!
//! * [`normal`]: Φ, φ and a numerically stable Mills ratio.
//! * [`single`]: the just-identified estimators (unbiased, 2SLS, Fuller) and
//!   the Anderson–Rubin set.
//! * [`multi`]: Rao–Blackwellized unbiased estimators for several
//!   instruments, weight schemes and the positive-recombination transform.
//! * [`covariance`]: the data pipeline from a raw table to `(ξ̂, Σ̂)`.
//! * [`risk`]: the known-direction submodel and the risk lower bound.
//! * [`simulation`]: desk-scale Monte Carlo and quadrature studies.
//! * [`cli`]: the `unbiased-iv` command line front end.

pub mod cli;
pub mod covariance;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod multi;
pub mod normal;
pub mod quadrature;
pub mod risk;
pub mod simulation;
pub mod single;
pub mod stats;

pub use error::{Error, Result};
pub use stats::{InstrumentBlock, ReducedFormStats};
