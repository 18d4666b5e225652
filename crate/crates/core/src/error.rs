use thiserror::Error;

use crate::latent::Shape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("buffer of length {len} does not fit shape {shape}")]
    Length { shape: Shape, len: usize },
    #[error("shape mismatch: expected {expected}, found {found}")]
    Mismatch { expected: Shape, found: Shape },
}
