//! Region-aware poster synthesis: region geometry, velocity models, boundary
//! gradient guidance, the two-stage region sampler and evaluation metrics.

pub mod color;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod latent;
pub mod layout;
pub mod metrics;
pub mod render;
pub mod sampler;
pub mod toy;
pub mod velocity;

pub use error::ShapeError;
pub use latent::{LatentGrid, Shape};
