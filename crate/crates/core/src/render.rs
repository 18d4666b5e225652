//! Latent → RGB visualization for analytic (toy) runs.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::latent::LatentGrid;

/// Per-channel affine map `pixel = 255 (v - min) / (max - min)`, and which
/// latent channel feeds each of R, G, B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub rgb_channels: [usize; 3],
}

impl AffineMap {
    /// Min/max of every channel of `z`.
    pub fn fit(z: &LatentGrid) -> Self {
        let (mut min, mut max) = (Vec::new(), Vec::new());
        for c in 0..z.channels() {
            let ch = z.channel(c);
            min.push(ch.iter().copied().fold(f64::INFINITY, f64::min));
            max.push(ch.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        let n = z.channels();
        Self {
            min,
            max,
            rgb_channels: [0, 1 % n, 2 % n],
        }
    }

    pub fn apply(&self, c: usize, v: f64) -> u8 {
        let span = self.max[c] - self.min[c];
        let unit = if span > 0.0 { (v - self.min[c]) / span } else { 0.5 };
        (unit * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// Maps latent channels to RGB (channel `k mod C` feeds colour `k`) and
/// upscales by nearest neighbour to `width×height`.
pub fn toy_decode(z: &LatentGrid, width: usize, height: usize) -> (RgbImage, AffineMap) {
    let map = AffineMap::fit(z);
    let img = RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let lx = x as usize * z.width() / width;
        let ly = y as usize * z.height() / height;
        Rgb(map.rgb_channels.map(|c| map.apply(c, z.get(c, ly, lx))))
    });
    (img, map)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Shape;

    #[test]
    fn single_channel_is_gray_and_stretched() {
        let z = LatentGrid::from_vec(Shape::new(1, 1, 2), vec![-3.0, 3.0]).unwrap();
        let (img, map) = toy_decode(&z, 4, 2);
        assert_eq!(map.rgb_channels, [0, 0, 0]);
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(1, 1).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [255, 255, 255]);
        assert_eq!(img.get_pixel(3, 1).0, [255, 255, 255]);
    }

    #[test]
    fn flat_channel_maps_to_mid_gray() {
        let z = LatentGrid::filled(Shape::new(3, 2, 2), 1.5);
        let (img, _) = toy_decode(&z, 2, 2);
        assert!(img.pixels().all(|p| p.0 == [128, 128, 128]));
    }

    #[test]
    fn png_round_trip() {
        let z = LatentGrid::from_fn(Shape::new(3, 4, 4), |c, y, x| (c + y * x) as f64);
        let (img, _) = toy_decode(&z, 8, 8);
        let bytes = encode_png(&img).unwrap();
        let back = image::load_from_memory(&bytes).unwrap().to_rgb8();
        assert_eq!(back, img);
    }
}
