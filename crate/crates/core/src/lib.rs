//! Interactive multi-objective search for component-based architectures.
//!
//! An analysis model (classes, methods, relationships) is partitioned into
//! components. A steady-state evolutionary loop scores partitions on three
//! minimized objectives and, at scheduled stops, asks a decision maker for
//! feedback that reshapes the fitness landscape.

pub mod architecture;
pub mod archive;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod fitness;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod par;
pub mod preferences;
pub mod session;

pub use error::{Error, Result};
