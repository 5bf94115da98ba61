//! Exponential integrators for semilinear parabolic SPDEs driven by Q-Wiener
//! noise on rectangles, with the spectral, operator and experiment layers
//! needed to run strong convergence studies.

pub mod error;
pub mod experiments;
pub mod grid;
pub mod noise;
pub mod operators;
pub mod phi;
pub mod schemes;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{Boundary, EdgeCondition, Grid, Layout};
pub use spectral::{Modes, SpectralBasis};
