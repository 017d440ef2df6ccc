//! Simulation and analysis of biased-assimilation opinion dynamics.

pub mod bounds;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod graph;
pub mod schedule;
pub mod seeding;
pub mod stability;

pub use error::{Error, Result};
