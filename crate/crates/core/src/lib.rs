//! Simulation and Monte Carlo verification of the Kella-Whitt martingale for
//! multidimensional Lévy processes, stochastic integrals against them and
//! their one-sided reflections.

pub mod config;
pub mod error;
pub mod exponents;
pub mod integrands;
pub mod martingale;
pub mod paths;
pub mod reflection;
pub mod verify;

pub use error::{Error, Result};
pub use exponents::{LevyModel, JumpComponent, JumpLaw};
