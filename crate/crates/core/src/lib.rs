//! Semiclassical Monte Carlo simulation of fast two-level atoms crossing a
//! rigid optical standing wave.
//!
//! The translational motion `(x, p)` is classical, the internal state is a
//! Bloch vector `(u, v, z)`, and spontaneous emission enters as a
//! piecewise-deterministic jump process that resets the atom to the ground
//! state and kicks its momentum by a recoil in `[-1, 1]`.
//!
//! Layout:
//!
//! * [`dynamics`]: deterministic equations of motion, Runge–Kutta stepping, energy.
//! * [`emission`]: emission hazard, recoil sampling, jump propagation.
//! * [`chaos`]: maximal Lyapunov exponents of the conservative system and the
//!   ensemble chaos probability.
//! * [`analytic`]: closed-form diffusion laws, node-crossing maps, heating.
//! * [`ensemble`]: parallel ensembles, diffusion/friction estimators, momentum
//!   sweeps and cloud observables.
//! * [`config`] and [`output`]: run configuration and CSV emission.
//!
//! All quantities are normalized: time in `1/Ω`, momentum in `ħk_f`,
//! position in `1/k_f`, diffusion in `ħ²k_f²Ω`.

pub mod analytic;
pub mod chaos;
pub mod config;
pub mod dynamics;
pub mod emission;
pub mod ensemble;
pub mod output;
pub mod params;
pub mod stats;

mod error;

pub use error::{Error, Result};
pub use params::{PhysicalConstants, SimParams};
