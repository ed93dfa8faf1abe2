pub mod error;
pub mod geometry;
pub mod groupwise;
pub mod io;
pub mod keypoints;
pub mod solvers;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::*;
pub use groupwise::*;
pub use keypoints::*;
pub use solvers::*;
pub use volume::*;
