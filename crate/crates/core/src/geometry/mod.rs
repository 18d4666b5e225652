//! Region partitions of the canvas: labels, adjacency, boundary pixel pairs,
//! clipped boundary distance fields and latent-resolution downsampling.

mod distance;
mod io;

pub use distance::{margin_for, squared_edt, DistanceField};
pub use io::{load_mask_file, load_polygon_json, read_indexed_png, write_indexed_png, PolygonMask};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RegionId = u32;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mask is empty ({width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("label buffer has {len} entries, expected {expected}")]
    LabelCount { len: usize, expected: usize },
    #[error("region {0} is declared but has no pixels")]
    MissingRegion(RegionId),
    #[error("region {0} is not part of this partition")]
    UnknownRegion(RegionId),
    #[error("regions {0} and {1} are not adjacent")]
    NotAdjacent(RegionId, RegionId),
    #[error("boundary margin must be >= 1 pixel, got {0}")]
    InvalidMargin(f64),
    #[error("invalid target size {width}x{height} for a {src_width}x{src_height} mask")]
    InvalidTargetSize {
        width: usize,
        height: usize,
        src_width: usize,
        src_height: usize,
    },
    #[error("region {0} vanished at latent resolution (mask too fine for the latent size)")]
    RegionVanished(RegionId),
    #[error("pixel ({x}, {y}) is not covered by any polygon")]
    UncoveredPixel { x: usize, y: usize },
    #[error("unsupported mask image: {0}")]
    UnsupportedImage(String),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("polygon json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pixel coordinate. Orders by row, then column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub y: usize,
    pub x: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { y, x }
    }

    pub fn dist2(&self, other: &Pixel) -> usize {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// Exact partition of a `width×height` canvas into labelled regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    width: usize,
    height: usize,
    labels: Vec<RegionId>,
    region_ids: Vec<RegionId>,
    pixel_counts: Vec<usize>,
    adjacency: BTreeMap<RegionId, Vec<RegionId>>,
    // keyed by (low id, high id); pairs are (pixel in low, pixel in high)
    boundaries: BTreeMap<(RegionId, RegionId), Vec<(Pixel, Pixel)>>,
    connectivity: Connectivity,
}

impl RegionSet {
    /// Builds a partition from row-major per-pixel labels using 4-connectivity.
    ///
    /// Region ids must be contiguous from 0: an id below the largest label
    /// that owns no pixel is reported as [`GeometryError::MissingRegion`].
    pub fn from_labels(
        width: usize,
        height: usize,
        labels: Vec<RegionId>,
    ) -> Result<Self, GeometryError> {
        Self::with_connectivity(width, height, labels, Connectivity::Four)
    }

    pub fn with_connectivity(
        width: usize,
        height: usize,
        labels: Vec<RegionId>,
        connectivity: Connectivity,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage { width, height });
        }
        if labels.len() != width * height {
            return Err(GeometryError::LabelCount {
                len: labels.len(),
                expected: width * height,
            });
        }
        let max_id = *labels.iter().max().expect("non-empty");
        let mut pixel_counts = vec![0usize; max_id as usize + 1];
        for &l in &labels {
            pixel_counts[l as usize] += 1;
        }
        if let Some(missing) = pixel_counts.iter().position(|&n| n == 0) {
            return Err(GeometryError::MissingRegion(missing as RegionId));
        }
        let region_ids: Vec<RegionId> = (0..=max_id).collect();

        let offsets: &[(isize, isize)] = match connectivity {
            Connectivity::Four => &[(1, 0), (0, 1)],
            Connectivity::Eight => &[(1, 0), (0, 1), (1, 1), (-1, 1)],
        };
        let mut boundaries: BTreeMap<(RegionId, RegionId), Vec<(Pixel, Pixel)>> = BTreeMap::new();
        for y in 0..height {
            for x in 0..width {
                let a = labels[y * width + x];
                for &(dx, dy) in offsets {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let b = labels[ny * width + nx];
                    if a == b {
                        continue;
                    }
                    let p = Pixel::new(x, y);
                    let q = Pixel::new(nx, ny);
                    let entry = if a < b { (p, q) } else { (q, p) };
                    boundaries.entry((a.min(b), a.max(b))).or_default().push(entry);
                }
            }
        }
        let mut adjacency: BTreeMap<RegionId, Vec<RegionId>> =
            region_ids.iter().map(|&id| (id, Vec::new())).collect();
        for &(i, j) in boundaries.keys() {
            adjacency.get_mut(&i).expect("known id").push(j);
            adjacency.get_mut(&j).expect("known id").push(i);
        }
        for list in adjacency.values_mut() {
            list.sort_unstable();
        }

        Ok(Self {
            width,
            height,
            labels,
            region_ids,
            pixel_counts,
            adjacency,
            boundaries,
            connectivity,
        })
    }

    /// A single region covering the whole canvas.
    pub fn uniform(width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::from_labels(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn labels(&self) -> &[RegionId] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> RegionId {
        self.labels[y * self.width + x]
    }

    pub fn region_ids(&self) -> &[RegionId] {
        &self.region_ids
    }

    pub fn region_count(&self) -> usize {
        self.region_ids.len()
    }

    pub fn contains(&self, id: RegionId) -> bool {
        (id as usize) < self.region_ids.len()
    }

    pub fn pixel_count(&self, id: RegionId) -> usize {
        self.pixel_counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn neighbors(&self, id: RegionId) -> &[RegionId] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn adjacency(&self) -> &BTreeMap<RegionId, Vec<RegionId>> {
        &self.adjacency
    }

    pub fn is_adjacent(&self, i: RegionId, j: RegionId) -> bool {
        i != j && self.boundaries.contains_key(&(i.min(j), i.max(j)))
    }

    /// Unordered boundary ids `{i, j}` as `(low, high)` pairs, sorted.
    pub fn boundary_ids(&self) -> impl Iterator<Item = (RegionId, RegionId)> + '_ {
        self.boundaries.keys().copied()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundaries.len()
    }

    /// Straddling pixel pairs `(p, q)` with `p` in region `i` and `q` in `j`.
    pub fn boundary_pairs(&self, i: RegionId, j: RegionId) -> Result<Vec<(Pixel, Pixel)>, GeometryError> {
        let pairs = self
            .boundaries
            .get(&(i.min(j), i.max(j)))
            .ok_or(GeometryError::NotAdjacent(i, j))?;
        Ok(if i < j {
            pairs.clone()
        } else {
            pairs.iter().map(|&(p, q)| (q, p)).collect()
        })
    }

    /// Pixels of region `i` that touch region `j`, sorted and deduplicated.
    pub fn boundary_pixels(&self, i: RegionId, j: RegionId) -> Result<Vec<Pixel>, GeometryError> {
        let mut px: Vec<Pixel> = self.boundary_pairs(i, j)?.into_iter().map(|(p, _)| p).collect();
        px.sort_unstable();
        px.dedup();
        Ok(px)
    }

    /// Binary mask `M_i` as a row-major boolean plane.
    pub fn mask(&self, id: RegionId) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }

    pub fn pixels_of(&self, id: RegionId) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.width;
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == id)
            .map(move |(k, _)| Pixel::new(k % w, k / w))
    }

    fn check_region(&self, id: RegionId) -> Result<(), GeometryError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(GeometryError::UnknownRegion(id))
        }
    }

    /// Clipped Euclidean distance from region-`i` pixels to the pixels of `i`
    /// that straddle the boundary with `j`.
    pub fn distance_field(&self, i: RegionId, j: RegionId, margin: f64) -> Result<DistanceField, GeometryError> {
        self.check_region(i)?;
        self.check_region(j)?;
        if !self.is_adjacent(i, j) {
            return Err(GeometryError::NotAdjacent(i, j));
        }
        if !(margin >= 1.0) || !margin.is_finite() {
            return Err(GeometryError::InvalidMargin(margin));
        }
        let seeds = self.boundary_pixels(i, j)?;
        Ok(DistanceField::from_seeds(i, j, self.width, self.height, &seeds, margin))
    }

    /// Majority-vote downsampling to `width×height` cells; ties go to the
    /// smallest id.
    pub fn downsample(&self, width: usize, height: usize) -> Result<RegionSet, GeometryError> {
        if width == 0 || height == 0 || width > self.width || height > self.height {
            return Err(GeometryError::InvalidTargetSize {
                width,
                height,
                src_width: self.width,
                src_height: self.height,
            });
        }
        let n = self.region_ids.len();
        let mut out = Vec::with_capacity(width * height);
        let mut counts = vec![0usize; n];
        for cy in 0..height {
            let y0 = cy * self.height / height;
            let y1 = (cy + 1) * self.height / height;
            for cx in 0..width {
                let x0 = cx * self.width / width;
                let x1 = (cx + 1) * self.width / width;
                counts.iter_mut().for_each(|c| *c = 0);
                for y in y0..y1 {
                    for x in x0..x1 {
                        counts[self.label(x, y) as usize] += 1;
                    }
                }
                // max_by_key keeps the last maximum; scan manually for the first
                let mut best = 0;
                for (id, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = id;
                    }
                }
                out.push(best as RegionId);
            }
        }
        let mut present = vec![false; n];
        for &l in &out {
            present[l as usize] = true;
        }
        if let Some(gone) = present.iter().position(|&p| !p) {
            return Err(GeometryError::RegionVanished(gone as RegionId));
        }
        RegionSet::with_connectivity(width, height, out, self.connectivity)
    }

    /// Debug check of the partition-of-unity invariant over all masks.
    pub fn is_exact_partition(&self) -> bool {
        let masks: Vec<Vec<bool>> = self.region_ids.iter().map(|&id| self.mask(id)).collect();
        (0..self.len()).all(|k| masks.iter().filter(|m| m[k]).count() == 1)
            && self.pixel_counts.iter().all(|&c| c > 0)
    }
}
