//! Tensor encoding for the velocity/decode HTTP protocol: row-major
//! little-endian `f32`, base64 (standard alphabet, padded).

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::VelocityError;
use crate::latent::{LatentGrid, Shape};

pub fn encode_tensor(grid: &LatentGrid) -> String {
    let mut bytes = Vec::with_capacity(grid.as_slice().len() * 4);
    for &v in grid.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_tensor(shape: [usize; 3], payload: &str) -> Result<LatentGrid, VelocityError> {
    let bytes = STANDARD
        .decode(payload)
        .map_err(|e| VelocityError::Protocol(format!("invalid base64: {e}")))?;
    let shape = Shape::new(shape[0], shape[1], shape[2]);
    if bytes.len() != shape.len() * 4 {
        return Err(VelocityError::Protocol(format!(
            "payload has {} bytes, shape {} needs {}",
            bytes.len(),
            shape,
            shape.len() * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(LatentGrid::from_vec(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_bytes() {
        let g = LatentGrid::from_vec(Shape::new(1, 1, 2), vec![1.0, -2.5]).unwrap();
        // 1.0f32 = 00 00 80 3f, -2.5f32 = 00 00 20 c0
        assert_eq!(encode_tensor(&g), "AACAPwAAIMA=");
    }

    #[test]
    fn wrong_length() {
        assert!(decode_tensor([1, 2, 2], "AACAPwAAIMA=").is_err());
        assert!(decode_tensor([1, 1, 1], "not base64!").is_err());
    }

    proptest! {
        #[test]
        fn f32_values_survive(values in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let shape = Shape::new(1, 1, values.len());
            let g = LatentGrid::from_vec(shape, values.iter().map(|&v| v as f64).collect()).unwrap();
            let back = decode_tensor(shape.as_array(), &encode_tensor(&g)).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
