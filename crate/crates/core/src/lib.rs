//! Numerical laboratory for finite perimeter sets on discrete conformal
//! surfaces: isoperimetric profiles, concentration-compactness decomposition
//! of bounded sequences, and detection of limit manifolds at infinity.

pub mod concentration;
pub mod error;
pub mod generators;
pub mod limits;
pub mod manifold;
pub mod mincut;
pub mod perimeter;
pub mod profile;
pub mod scenario;

pub use error::{Error, Result};
