//! Boundary gradient difference (BGD) and regional style difference (RSD).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::luma;
use crate::geometry::{GeometryError, RegionId, RegionSet};
use crate::guidance::{boundary_matches, cosine, SobelKernel, Stencil};
use crate::latent::{LatentGrid, Shape};

/// Default BGD strip width in image pixels.
pub const DEFAULT_BGD_STRIP: usize = 2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image is {image_w}x{image_h} but the mask is {mask_w}x{mask_h}")]
    SizeMismatch {
        image_w: usize,
        image_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
    #[error("style difference needs at least two regions")]
    TooFewRegions,
    #[error("every region is smaller than the filter support ({0} pixels)")]
    AllRegionsExcluded(usize),
    #[error("features file: {0}")]
    Features(String),
    #[error("strip width must be >= 1")]
    InvalidStrip,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `H×W` RGB image as a 3-channel grid with values in `[0, 1]`.
pub fn rgb_to_grid(img: &image::RgbImage) -> LatentGrid {
    let (w, h) = (img.width() as usize, img.height() as usize);
    LatentGrid::from_fn(Shape::new(3, h, w), |c, y, x| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
}

fn check_size(image: &LatentGrid, rs: &RegionSet) -> Result<(), MetricsError> {
    if image.width() != rs.width() || image.height() != rs.height() {
        return Err(MetricsError::SizeMismatch {
            image_w: image.width(),
            image_h: image.height(),
            mask_w: rs.width(),
            mask_h: rs.height(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BgdFlag {
    /// No boundaries; BGD is defined as 0.
    NoBoundaries,
    /// Every matched pair involves a zero gradient; BGD is 1.
    DegenerateGradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryBgd {
    pub regions: (RegionId, RegionId),
    pub value: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgdResult {
    pub bgd: f64,
    pub per_boundary: Vec<BoundaryBgd>,
    pub flag: Option<BgdFlag>,
}

/// `1 - mean cos(g_p, g_q)` over matched strip pairs, with image gradients
/// from the 5×5 Sobel over the whole canvas.
pub fn compute_bgd(image: &LatentGrid, rs: &RegionSet, strip_k: usize) -> Result<BgdResult, MetricsError> {
    check_size(image, rs)?;
    if strip_k == 0 {
        return Err(MetricsError::InvalidStrip);
    }
    if rs.boundary_count() == 0 {
        return Ok(BgdResult {
            bgd: 0.0,
            per_boundary: Vec::new(),
            flag: Some(BgdFlag::NoBoundaries),
        });
    }
    let (w, h) = (rs.width(), rs.height());
    let canvas = vec![true; w * h];
    let kernel = SobelKernel::standard().flat();
    let c2 = 2 * image.channels();
    let mut per_boundary = Vec::new();
    let (mut total, mut count, mut informative) = (0.0, 0usize, false);
    for (low, high) in rs.boundary_ids() {
        // both directions, so the value does not depend on id order
        let mut pairs = boundary_matches(rs, low, high, strip_k)?;
        pairs.extend(boundary_matches(rs, high, low, strip_k)?.into_iter().map(|(q, p)| (p, q)));
        let idx: Vec<usize> = pairs
            .iter()
            .flat_map(|(p, q)| [p.y * w + p.x, q.y * w + q.x])
            .collect();
        let stencil = Stencil::build(&canvas, w, h, &idx);
        let (mut a, mut b) = (vec![0.0; c2], vec![0.0; c2]);
        let mut sum = 0.0;
        for m in 0..pairs.len() {
            stencil.gradient_at(&kernel, image, 2 * m, &mut a);
            stencil.gradient_at(&kernel, image, 2 * m + 1, &mut b);
            let nonzero = |v: &[f64]| v.iter().any(|&x| x != 0.0);
            informative |= nonzero(&a) && nonzero(&b);
            sum += cosine(&a, &b);
        }
        per_boundary.push(BoundaryBgd {
            regions: (low, high),
            value: 1.0 - sum / pairs.len() as f64,
            pairs: pairs.len(),
        });
        total += sum;
        count += pairs.len();
    }
    Ok(BgdResult {
        bgd: 1.0 - total / count as f64,
        per_boundary,
        flag: (!informative).then_some(BgdFlag::DegenerateGradients),
    })
}

/// Symmetric `F×F` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gram {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Gram {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.size + b]
    }

    pub fn mse(&self, other: &Gram) -> f64 {
        assert_eq!(self.size, other.size, "gram sizes differ");
        let n = self.data.len() as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
    }
}

/// Style features of the masked part of an image.
pub trait StyleExtractor {
    fn id(&self) -> String;
    fn feature_count(&self) -> usize;
    /// Smallest region (in pixels) the extractor accepts.
    fn min_region_pixels(&self) -> usize;
    /// Gram of the filter responses over the masked pixels, divided by the
    /// pixel count.
    fn gram(&self, image: &LatentGrid, mask: &[bool]) -> Gram;
    fn parameters(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, PartialEq)]
struct GaborFilter {
    theta_deg: f64,
    wavelength: f64,
    phase: &'static str,
    radius: usize,
    taps: Vec<f64>,
}

/// Frozen bank of 16 Gabor filters on luminance: 4 orientations × 2
/// wavelengths × {cos, sin}. Each kernel is zero-mean with unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborExtractor {
    filters: Vec<GaborFilter>,
}

pub const GABOR_ORIENTATIONS: [f64; 4] = [0.0, 45.0, 90.0, 135.0];
pub const GABOR_WAVELENGTHS: [f64; 2] = [4.0, 8.0];
pub const GABOR_SIGMA_RATIO: f64 = 0.4;

pub fn default_style_extractor() -> GaborExtractor {
    GaborExtractor::new()
}

impl Default for GaborExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl GaborExtractor {
    pub fn new() -> Self {
        let mut filters = Vec::with_capacity(16);
        for &theta_deg in &GABOR_ORIENTATIONS {
            for &wavelength in &GABOR_WAVELENGTHS {
                for phase in ["cos", "sin"] {
                    filters.push(gabor(theta_deg, wavelength, phase));
                }
            }
        }
        Self { filters }
    }

    /// Index of the filter with the given parameters.
    pub fn filter_index(orientation: usize, scale: usize, sin_phase: bool) -> usize {
        orientation * 4 + scale * 2 + usize::from(sin_phase)
    }

    /// Responses of every filter at every pixel (clamp-to-edge borders),
    /// laid out `F×H×W`.
    pub fn responses(&self, image: &LatentGrid) -> LatentGrid {
        let (w, h) = (image.width(), image.height());
        let lum = luminance(image);
        let mut out = LatentGrid::zeros(Shape::new(self.filters.len(), h, w));
        for (f, filter) in self.filters.iter().enumerate() {
            let r = filter.radius as isize;
            let side = 2 * filter.radius + 1;
            let plane = out.channel_mut(f);
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let row = &filter.taps[((dy + r) as usize) * side..];
                        for dx in -r..=r {
                            let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                            acc += row[(dx + r) as usize] * lum[yy * w + xx];
                        }
                    }
                    plane[y as usize * w + x as usize] = acc;
                }
            }
        }
        out
    }
}

fn gabor(theta_deg: f64, wavelength: f64, phase: &'static str) -> GaborFilter {
    let sigma = GABOR_SIGMA_RATIO * wavelength;
    let radius = (2.5 * sigma).ceil() as usize;
    let r = radius as isize;
    let (s, c) = theta_deg.to_radians().sin_cos();
    let mut taps = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (dx as f64, dy as f64);
            let along = x * c + y * s;
            let envelope = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            let carrier = 2.0 * PI * along / wavelength;
            taps.push(envelope * if phase == "cos" { carrier.cos() } else { carrier.sin() });
        }
    }
    let mean = taps.iter().sum::<f64>() / taps.len() as f64;
    taps.iter_mut().for_each(|v| *v -= mean);
    let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|v| *v /= norm);
    GaborFilter {
        theta_deg,
        wavelength,
        phase,
        radius,
        taps,
    }
}

fn luminance(image: &LatentGrid) -> Vec<f64> {
    let plane = image.shape().plane();
    match image.channels() {
        1 => image.channel(0).to_vec(),
        3 => (0..plane)
            .map(|k| luma([image.channel(0)[k], image.channel(1)[k], image.channel(2)[k]]))
            .collect(),
        c => (0..plane).map(|k| (0..c).map(|ch| image.channel(ch)[k]).sum::<f64>() / c as f64).collect(),
    }
}

fn gram_of(responses: &LatentGrid, mask: &[bool]) -> Gram {
    let f = responses.channels();
    let idx: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    let n = idx.len().max(1) as f64;
    let mut data = vec![0.0; f * f];
    for a in 0..f {
        let ra = responses.channel(a);
        for b in a..f {
            let rb = responses.channel(b);
            let v = idx.iter().map(|&k| ra[k] * rb[k]).sum::<f64>() / n;
            data[a * f + b] = v;
            data[b * f + a] = v;
        }
    }
    Gram { size: f, data }
}

impl StyleExtractor for GaborExtractor {
    fn id(&self) -> String {
        "gabor16-v1".into()
    }

    fn feature_count(&self) -> usize {
        self.filters.len()
    }

    fn min_region_pixels(&self) -> usize {
        self.filters.iter().map(|f| (2 * f.radius + 1).pow(2)).max().unwrap_or(1)
    }

    fn gram(&self, image: &LatentGrid, mask: &[bool]) -> Gram {
        gram_of(&self.responses(image), mask)
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::json!({
            "orientations_deg": GABOR_ORIENTATIONS,
            "wavelengths": GABOR_WAVELENGTHS,
            "sigma_ratio": GABOR_SIGMA_RATIO,
            "phases": ["cos", "sin"],
            "kernel_sizes": self.filters.iter().map(|f| 2 * f.radius + 1).collect::<Vec<_>>(),
            "input": "luma",
            "border": "clamp",
            "filters": self.filters.iter().map(|f| format!("{}deg/{}px/{}", f.theta_deg, f.wavelength, f.phase)).collect::<Vec<_>>(),
        })
    }
}

/// Per-region Grams from an extractor, skipping regions smaller than its
/// support. Returns the Grams and the excluded region ids.
pub fn region_grams(
    image: &LatentGrid,
    rs: &RegionSet,
    extractor: &dyn StyleExtractor,
) -> Result<(BTreeMap<RegionId, Gram>, Vec<RegionId>), MetricsError> {
    check_size(image, rs)?;
    let min = extractor.min_region_pixels();
    let mut grams = BTreeMap::new();
    let mut excluded = Vec::new();
    for &id in rs.region_ids() {
        if rs.pixel_count(id) < min {
            excluded.push(id);
        } else {
            grams.insert(id, extractor.gram(image, &rs.mask(id)));
        }
    }
    Ok((grams, excluded))
}

/// Mean over unordered region pairs of the mean squared Gram difference.
pub fn rsd_from_grams(grams: &BTreeMap<RegionId, Gram>) -> Result<f64, MetricsError> {
    let g: Vec<&Gram> = grams.values().collect();
    if g.len() < 2 {
        return Err(MetricsError::TooFewRegions);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..g.len() {
        for b in a + 1..g.len() {
            total += g[a].mse(g[b]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsdResult {
    pub rsd: f64,
    pub excluded: Vec<RegionId>,
}

pub fn compute_rsd(image: &LatentGrid, rs: &RegionSet, extractor: &dyn StyleExtractor) -> Result<RsdResult, MetricsError> {
    if rs.region_count() < 2 {
        return Err(MetricsError::TooFewRegions);
    }
    let (grams, excluded) = region_grams(image, rs, extractor)?;
    if grams.is_empty() {
        return Err(MetricsError::AllRegionsExcluded(extractor.min_region_pixels()));
    }
    Ok(RsdResult {
        rsd: rsd_from_grams(&grams)?,
        excluded,
    })
}

/// Externally computed Grams: `{"extractor_id", "regions": [{"id", "gram"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesFile {
    pub extractor_id: String,
    pub regions: Vec<RegionFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub id: RegionId,
    pub gram: Vec<f64>,
}

impl FeaturesFile {
    pub fn from_grams(extractor_id: impl Into<String>, grams: &BTreeMap<RegionId, Gram>) -> Self {
        Self {
            extractor_id: extractor_id.into(),
            regions: grams
                .iter()
                .map(|(&id, g)| RegionFeatures { id, gram: g.data.clone() })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Features(e.to_string()))
    }

    /// Grams keyed by region id; each must be square and all the same size.
    pub fn grams(&self) -> Result<BTreeMap<RegionId, Gram>, MetricsError> {
        let mut out = BTreeMap::new();
        let mut size = None;
        for r in &self.regions {
            let f = (r.gram.len() as f64).sqrt().round() as usize;
            if f * f != r.gram.len() || f == 0 {
                return Err(MetricsError::Features(format!("region {} gram is not square", r.id)));
            }
            if *size.get_or_insert(f) != f {
                return Err(MetricsError::Features("gram sizes differ between regions".into()));
            }
            if out.insert(r.id, Gram { size: f, data: r.gram.clone() }).is_some() {
                return Err(MetricsError::Features(format!("region {} listed twice", r.id)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bgd: f64,
    pub bgd_flag: Option<BgdFlag>,
    pub per_boundary_bgd: BTreeMap<String, f64>,
    pub per_boundary_pairs: BTreeMap<String, usize>,
    pub rsd: Option<f64>,
    pub rsd_error: Option<String>,
    pub rsd_excluded_regions: Vec<RegionId>,
    pub extractor_id: String,
    pub parameters: serde_json::Value,
}

pub enum StyleSource<'a> {
    Extractor(&'a dyn StyleExtractor),
    File(&'a FeaturesFile),
}

/// BGD and RSD of `image` over `rs`. RSD failures are reported in the
/// report rather than returned.
pub fn metrics_report(
    image: &LatentGrid,
    rs: &RegionSet,
    strip_k: usize,
    style: StyleSource<'_>,
) -> Result<MetricsReport, MetricsError> {
    let bgd = compute_bgd(image, rs, strip_k)?;
    let key = |b: &BoundaryBgd| format!("{}-{}", b.regions.0, b.regions.1);
    let (rsd, excluded, extractor_id, extractor_params) = match style {
        StyleSource::Extractor(ex) => {
            let r = compute_rsd(image, rs, ex);
            let excluded = r.as_ref().map(|r| r.excluded.clone()).unwrap_or_default();
            (r.map(|r| r.rsd), excluded, ex.id(), ex.parameters())
        }
        StyleSource::File(file) => {
            let r = if rs.region_count() < 2 {
                Err(MetricsError::TooFewRegions)
            } else {
                file.grams().and_then(|g| rsd_from_grams(&g))
            };
            (r, Vec::new(), file.extractor_id.clone(), serde_json::json!("external"))
        }
    };
    Ok(MetricsReport {
        bgd: bgd.bgd,
        bgd_flag: bgd.flag,
        per_boundary_bgd: bgd.per_boundary.iter().map(|b| (key(b), b.value)).collect(),
        per_boundary_pairs: bgd.per_boundary.iter().map(|b| (key(b), b.pairs)).collect(),
        rsd: rsd.as_ref().ok().copied(),
        rsd_error: rsd.err().map(|e| e.to_string()),
        rsd_excluded_regions: excluded,
        extractor_id,
        parameters: serde_json::json!({
            "bgd_strip_k": strip_k,
            "bgd_gradient": "sobel5x5 over the canvas",
            "extractor": extractor_params,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vsplit(w: usize, h: usize, at: usize) -> RegionSet {
        RegionSet::from_labels(w, h, (0..w * h).map(|k| u32::from(k % w >= at)).collect()).unwrap()
    }

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> LatentGrid {
        LatentGrid::from_fn(Shape::new(3, h, w), |_, y, x| f(x, y))
    }

    #[test]
    fn constant_image_is_degenerate() {
        let rs = vsplit(16, 12, 8);
        let r = compute_bgd(&gray(16, 12, |_, _| 0.4), &rs, DEFAULT_BGD_STRIP).unwrap();
        assert_eq!(r.bgd, 1.0);
        assert_eq!(r.flag, Some(BgdFlag::DegenerateGradients));
    }

    #[test]
    fn ramp_across_boundary() {
        let rs = vsplit(16, 12, 8);
        let r = compute_bgd(&gray(16, 12, |x, y| 0.03 * x as f64 + 0.01 * y as f64), &rs, DEFAULT_BGD_STRIP).unwrap();
        assert!(r.bgd < 1e-6, "{}", r.bgd);
        assert_eq!(r.flag, None);
    }

    /// Rows alternate the boundary between `at+1` and `at+2`.
    fn jagged(w: usize, h: usize, at: usize) -> RegionSet {
        RegionSet::from_labels(w, h, (0..w * h).map(|k| u32::from(k % w >= at + 1 + (k / w) % 2)).collect()).unwrap()
    }

    #[test]
    fn step_edge_aligned_vs_misaligned() {
        let img = gray(20, 12, |x, _| if x < 10 { 0.0 } else { 1.0 });
        let aligned = compute_bgd(&img, &vsplit(20, 12, 10), DEFAULT_BGD_STRIP).unwrap();
        let shifted = compute_bgd(&img, &jagged(20, 12, 10), DEFAULT_BGD_STRIP).unwrap();
        assert!(aligned.bgd < 0.05, "{}", aligned.bgd);
        assert!(shifted.bgd > aligned.bgd, "{} vs {}", shifted.bgd, aligned.bgd);
    }

    #[test]
    fn bgd_bounds_weighting_and_brightness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<u32> = (0..24 * 16).map(|k| ((k % 24) / 8) as u32).collect();
        let rs = RegionSet::from_labels(24, 16, labels).unwrap();
        let img = LatentGrid::from_fn(Shape::new(3, 16, 24), |_, _, _| rng.random::<f64>());
        let r = compute_bgd(&img, &rs, 3).unwrap();
        assert!((0.0..=2.0).contains(&r.bgd));
        let total: usize = r.per_boundary.iter().map(|b| b.pairs).sum();
        let weighted: f64 = r.per_boundary.iter().map(|b| b.value * b.pairs as f64).sum::<f64>() / total as f64;
        assert!((weighted - r.bgd).abs() < 1e-12);
        let brighter = img.map(|v| v + 0.25);
        assert!((compute_bgd(&brighter, &rs, 3).unwrap().bgd - r.bgd).abs() < 1e-9);
    }

    #[test]
    fn no_boundaries_flag() {
        let rs = RegionSet::uniform(8, 8).unwrap();
        let r = compute_bgd(&gray(8, 8, |x, _| x as f64), &rs, 2).unwrap();
        assert_eq!((r.bgd, r.flag), (0.0, Some(BgdFlag::NoBoundaries)));
    }

    #[test]
    fn size_mismatch() {
        let rs = vsplit(8, 8, 4);
        assert!(matches!(
            compute_bgd(&gray(9, 8, |_, _| 0.0), &rs, 2),
            Err(MetricsError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn gabor_bank_properties() {
        let ex = GaborExtractor::new();
        assert_eq!(ex.feature_count(), 16);
        assert_eq!(ex.min_region_pixels(), 17 * 17);
        for f in &ex.filters {
            assert!(f.taps.iter().sum::<f64>().abs() < 1e-12);
            assert!((f.taps.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let rs = RegionSet::uniform(24, 24).unwrap();
        let g = ex.gram(&gray(24, 24, |_, _| 0.7), &rs.mask(0));
        assert!(g.data.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn white_noise_gram_is_diagonal_dominant() {
        let ex = GaborExtractor::new();
        let mask = vec![true; 48 * 48];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = LatentGrid::from_fn(Shape::new(1, 48, 48), |_, _, _| rng.random::<f64>());
            let g = ex.gram(&img, &mask);
            let diag_mean = (0..16).map(|a| g.get(a, a)).sum::<f64>() / 16.0;
            for a in 0..16 {
                for b in 0..16 {
                    assert!((g.get(a, b) - g.get(b, a)).abs() < 1e-15);
                    if a != b {
                        assert!(g.get(a, b).abs() < diag_mean, "seed {seed} ({a},{b})");
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_permutes_orientation_blocks() {
        let ex = GaborExtractor::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40;
        let base: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let img = LatentGrid::from_fn(Shape::new(1, n, n), |_, y, x| base[y * n + x]);
        // quarter turn: (x, y) -> (n-1-y, x)
        let rot = LatentGrid::from_fn(Shape::new(1, n, n), |_, y, x| base[(n - 1 - x) * n + y]);
        // only pixels far from the border, where clamping does not interfere
        let mask: Vec<bool> = (0..n * n).map(|k| (10..30).contains(&(k % n)) && (10..30).contains(&(k / n))).collect();
        let rot_mask: Vec<bool> = (0..n * n).map(|k| mask[(n - 1 - k % n) * n + k / n]).collect();
        let ga = ex.gram(&img, &mask);
        let gb = ex.gram(&rot, &rot_mask);
        for o in 0..4 {
            let o_rot = (o + 2) % 4;
            for s in 0..2 {
                for p in [false, true] {
                    let a = GaborExtractor::filter_index(o, s, p);
                    let b = GaborExtractor::filter_index(o_rot, s, p);
                    assert!((ga.get(a, a) - gb.get(b, b)).abs() < 1e-9, "o={o} s={s} p={p}");
                }
            }
        }
    }

    fn stripes(w: usize, h: usize, horizontal_left: bool, horizontal_right: bool) -> LatentGrid {
        LatentGrid::from_fn(Shape::new(3, h, w), |_, y, x| {
            let horizontal = if x < w / 2 { horizontal_left } else { horizontal_right };
            let k = if horizontal { y } else { x };
            if (k / 2) % 2 == 0 { 0.2 } else { 0.8 }
        })
    }

    #[test]
    fn rsd_orders_stripe_orientations() {
        let rs = vsplit(64, 32, 32);
        let ex = GaborExtractor::new();
        let same = compute_rsd(&stripes(64, 32, true, true), &rs, &ex).unwrap().rsd;
        let cross = compute_rsd(&stripes(64, 32, true, false), &rs, &ex).unwrap().rsd;
        assert!(cross > same, "{cross} vs {same}");
        let uniform = compute_rsd(&gray(64, 32, |_, _| 0.5), &rs, &ex).unwrap().rsd;
        assert!(uniform < 1e-9);
    }

    #[test]
    fn rsd_preconditions() {
        let ex = GaborExtractor::new();
        let one = RegionSet::uniform(32, 32).unwrap();
        assert!(matches!(compute_rsd(&gray(32, 32, |_, _| 0.0), &one, &ex), Err(MetricsError::TooFewRegions)));
        let small = vsplit(20, 10, 10);
        assert!(matches!(
            compute_rsd(&gray(20, 10, |_, _| 0.0), &small, &ex),
            Err(MetricsError::AllRegionsExcluded(289))
        ));
    }

    #[test]
    fn rsd_symmetric_in_region_order() {
        let ex = GaborExtractor::new();
        let img = stripes(64, 32, true, false);
        let a = compute_rsd(&img, &vsplit(64, 32, 32), &ex).unwrap().rsd;
        let swapped = RegionSet::from_labels(64, 32, (0..64 * 32).map(|k| u32::from(k % 64 < 32)).collect()).unwrap();
        let b = compute_rsd(&img, &swapped, &ex).unwrap().rsd;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn features_file_round_trip() {
        let ex = GaborExtractor::new();
        let rs = vsplit(64, 32, 32);
        let img = stripes(64, 32, true, false);
        let (grams, _) = region_grams(&img, &rs, &ex).unwrap();
        let file = FeaturesFile::from_grams(ex.id(), &grams);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.json");
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let loaded = FeaturesFile::load(&path).unwrap();
        let from_file = metrics_report(&img, &rs, 2, StyleSource::File(&loaded)).unwrap();
        let direct = metrics_report(&img, &rs, 2, StyleSource::Extractor(&ex)).unwrap();
        assert_eq!(from_file.rsd, direct.rsd);
        assert_eq!(from_file.extractor_id, "gabor16-v1");
    }
}
