//! Differential positivity analysis for low-dimensional systems.

pub mod config;
pub mod dynsys;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod integrate;
pub mod limitsets;
pub mod models;
pub mod pffield;
pub mod positivity;
pub mod sampling;
pub mod svg;
mod serde_ext;

pub use config::{Command, RunConfig};
pub use dynsys::{ChartTopology, CoordKind, SystemDef, TimeKind, VectorField};
pub use error::{Error, Result};
pub use geometry::{Cone, ConeField, HilbertDistance};
pub use integrate::{Input, Trajectory};
pub use models::{make_model, ModelName, ModelSpec};
pub use sampling::StateBox;
