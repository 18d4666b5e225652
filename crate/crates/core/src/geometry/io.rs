//! Mask file formats: 8-bit indexed PNG (palette index = region id) and a
//! JSON polygon description rasterized with the even-odd rule.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryError, RegionId, RegionSet};

/// Reads an indexed (or 8-bit grayscale) PNG; each sample value is a region id.
pub fn read_indexed_png(path: impl AsRef<Path>) -> Result<RegionSet, GeometryError> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if !matches!(color, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(GeometryError::UnsupportedImage(format!(
            "expected an indexed or grayscale png, found {color:?}"
        )));
    }
    let bits = match depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => {
            return Err(GeometryError::UnsupportedImage("16-bit masks are not supported".into()))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * stride..(y + 1) * stride];
        for x in 0..width {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - (bit % 8);
            let mask = ((1u16 << bits) - 1) as u8;
            labels.push(((byte >> shift) & mask) as RegionId);
        }
    }
    RegionSet::from_labels(width, height, labels)
}

/// Writes the partition as an 8-bit indexed PNG with a fixed palette.
pub fn write_indexed_png(rs: &RegionSet, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    if rs.region_count() > 256 {
        return Err(GeometryError::UnsupportedImage(
            "more than 256 regions cannot be stored in an indexed png".into(),
        ));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, rs.width() as u32, rs.height() as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    let palette: Vec<u8> = (0..rs.region_count())
        .flat_map(|k| {
            // golden-angle hue spread so neighbouring ids look different
            let hue = (k as f64 * 137.508) % 360.0;
            let [r, g, b] = crate::color::hsv_to_rgb(hue, 0.65, 0.9);
            [r, g, b]
        })
        .collect();
    encoder.set_palette(palette);
    let mut writer = encoder.write_header()?;
    let data: Vec<u8> = rs.labels().iter().map(|&l| l as u8).collect();
    writer.write_image_data(&data)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Polygons {
    Many(Vec<Vec<[f64; 2]>>),
    One(Vec<[f64; 2]>),
}

impl Polygons {
    fn rings(&self) -> Vec<&[[f64; 2]]> {
        match self {
            Polygons::Many(v) => v.iter().map(Vec::as_slice).collect(),
            Polygons::One(v) => vec![v.as_slice()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonRegion {
    pub id: RegionId,
    pub polygons: Polygons,
}

/// `{"width","height","regions":[{"id","polygons"}]}`; coordinates are in
/// pixels with the origin at the top-left corner of the canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonMask {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<PolygonRegion>,
}

impl PolygonMask {
    /// Samples every pixel centre; later regions paint over earlier ones.
    pub fn rasterize(&self) -> Result<RegionSet, GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::EmptyImage {
                width: self.width,
                height: self.height,
            });
        }
        let mut labels: Vec<Option<RegionId>> = vec![None; self.width * self.height];
        for region in &self.regions {
            let rings = region.polygons.rings();
            for y in 0..self.height {
                for x in 0..self.width {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let crossings: usize = rings.iter().map(|r| crossings(r, px, py)).sum();
                    if crossings % 2 == 1 {
                        labels[y * self.width + x] = Some(region.id);
                    }
                }
            }
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                l.ok_or(GeometryError::UncoveredPixel {
                    x: k % self.width,
                    y: k / self.width,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        RegionSet::from_labels(self.width, self.height, labels)
    }
}

/// Number of ring edges crossed by the ray from `(px, py)` towards +x.
fn crossings(ring: &[[f64; 2]], px: f64, py: f64) -> usize {
    let n = ring.len();
    if n < 3 {
        return 0;
    }
    let mut count = 0;
    for k in 0..n {
        let [x0, y0] = ring[k];
        let [x1, y1] = ring[(k + 1) % n];
        if (y0 > py) != (y1 > py) {
            let xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0);
            if px < xi {
                count += 1;
            }
        }
    }
    count
}

pub fn load_polygon_json(path: impl AsRef<Path>) -> Result<RegionSet, GeometryError> {
    let mask: PolygonMask = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    mask.rasterize()
}

/// Dispatches on the file extension: `.json` polygons, anything else PNG.
pub fn load_mask_file(path: impl AsRef<Path>) -> Result<RegionSet, GeometryError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => load_polygon_json(path),
        _ => read_indexed_png(path),
    }
}
