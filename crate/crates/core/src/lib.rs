//! Plane-strain SPH solver for submerged elastic soil.
//!
//! Effective stress is integrated with a Jaumann-rate hypoelastic law and
//! the pore-water pressure enters the momentum balance either in the
//! conventional summed form or in the difference form that vanishes for a
//! constant pressure field at a free surface.

pub mod boundary;
pub mod cli_io;
pub mod constitutive;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod momentum;
pub mod particles;
pub mod scenarios;
pub mod sph_ops;
pub mod tensor;

pub use engine::{Simulation, SolverSettings};
pub use error::{Result, SphError};
pub use scenarios::ScenarioConfig;
