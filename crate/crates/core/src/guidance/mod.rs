//! Gradient consistency loss across region boundaries and the latent update
//! that descends it.
//!
//! For every boundary `b = {i, j}` (stored with `i < j`), strip pixels of
//! region `i` within `k` pixels of the boundary are matched to their nearest
//! strip pixel in region `j`. The Sobel gradient of `ẑ_i` (masked to `M_i`)
//! at the first pixel and of `ẑ_j` (masked to `M_j`) at the second form one
//! matched pair, and
//!
//! ```text
//! L = Σ_b (1 - mean_pairs cos²(g, g'))
//! ```
//!
//! A zero-norm gradient makes `cos = 0` and contributes no derivative.

mod sobel;

pub use sobel::{masked_sobel, SobelKernel, Stencil, TAPS};

use thiserror::Error;

use crate::geometry::{squared_edt, GeometryError, Pixel, RegionId, RegionSet};
use crate::latent::LatentGrid;

pub const DEFAULT_STRIP_WIDTH: usize = 2;
const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expected {expected} region latents, got {found}")]
    LatentCount { expected: usize, found: usize },
    #[error("latent for region {0} has the wrong spatial size")]
    LatentSize(RegionId),
    #[error("guidance step must be finite and >= 0, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value in guidance input")]
    NonFinite,
    #[error("strip width must be >= 1")]
    InvalidStripWidth,
    #[error(transparent)]
    Shape(#[from] crate::error::ShapeError),
}

/// Matched gradient vectors along one boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGradientPair {
    pub boundary: (RegionId, RegionId),
    /// `(p, q)` with `p` in the low-id region and `q` in the high-id region.
    pub pairs: Vec<(Pixel, Pixel)>,
    /// `2C`-vectors from the low-id side, one per pair.
    pub g: Vec<Vec<f64>>,
    /// `2C`-vectors from the high-id side, one per pair.
    pub g_prime: Vec<Vec<f64>>,
}

/// Strip pixels of `region` whose distance to its boundary with `other` is
/// below `k`.
fn strip(rs: &RegionSet, region: RegionId, other: RegionId, k: usize) -> Result<Vec<Pixel>, GeometryError> {
    let seeds = rs.boundary_pixels(region, other)?;
    let d2 = squared_edt(rs.width(), rs.height(), &seeds);
    let limit = (k * k) as f64;
    Ok(rs.pixels_of(region).filter(|p| d2[p.y * rs.width() + p.x] < limit).collect())
}

/// Nearest pixel of `candidates` to `p`, ties to the smaller row then column.
///
/// Searches square rings of growing radius over an occupancy grid.
fn nearest_match(p: Pixel, occupied: &[bool], width: usize, height: usize) -> Pixel {
    let (px, py) = (p.x as isize, p.y as isize);
    let mut best: Option<(usize, Pixel)> = None;
    let limit = width.max(height) as isize;
    for r in 0..=limit {
        for dy in -r..=r {
            let edge_row = dy.abs() == r;
            let step = if edge_row || r == 0 { 1 } else { 2 * r };
            let mut dx = -r;
            while dx <= r {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && occupied[y as usize * width + x as usize] {
                    let q = Pixel::new(x as usize, y as usize);
                    let d2 = (dx * dx + dy * dy) as usize;
                    if best.is_none_or(|(bd, bq)| (d2, q) < (bd, bq)) {
                        best = Some((d2, q));
                    }
                }
                dx += step;
            }
        }
        if let Some((d2, _)) = best {
            let next = (r + 1) as usize;
            if d2 < next * next {
                break;
            }
        }
    }
    best.expect("candidate set is non-empty").1
}

/// Strip pixels of `low` within `k` of its boundary with `high`, each paired
/// with the nearest strip pixel of `high`.
pub fn boundary_matches(
    rs: &RegionSet,
    low: RegionId,
    high: RegionId,
    k: usize,
) -> Result<Vec<(Pixel, Pixel)>, GeometryError> {
    let (w, h) = (rs.width(), rs.height());
    let strip_low = strip(rs, low, high, k)?;
    let strip_high = strip(rs, high, low, k)?;
    assert!(!strip_low.is_empty() && !strip_high.is_empty(), "boundary strips are never empty");
    let mut occupied = vec![false; w * h];
    for q in &strip_high {
        occupied[q.y * w + q.x] = true;
    }
    Ok(strip_low.iter().map(|&p| (p, nearest_match(p, &occupied, w, h))).collect())
}

/// Precomputed strips, matches and stencils for one boundary.
#[derive(Debug, Clone)]
struct BoundaryPlan {
    low: RegionId,
    high: RegionId,
    pairs: Vec<(Pixel, Pixel)>,
    stencil_low: Stencil,
    stencil_high: Stencil,
}

/// Geometry-only part of the loss, reusable across denoising steps.
#[derive(Debug, Clone)]
pub struct GuidancePlan {
    width: usize,
    height: usize,
    region_count: usize,
    strip_width: usize,
    boundaries: Vec<BoundaryPlan>,
    kernel: ([f64; TAPS], [f64; TAPS]),
}

impl GuidancePlan {
    pub fn new(rs: &RegionSet, strip_width: usize) -> Result<Self, GuidanceError> {
        if strip_width == 0 {
            return Err(GuidanceError::InvalidStripWidth);
        }
        let (w, h) = (rs.width(), rs.height());
        let mut boundaries = Vec::with_capacity(rs.boundary_count());
        for (low, high) in rs.boundary_ids() {
            let pairs = boundary_matches(rs, low, high, strip_width)?;
            let mask_low = rs.mask(low);
            let mask_high = rs.mask(high);
            let idx_low: Vec<usize> = pairs.iter().map(|(p, _)| p.y * w + p.x).collect();
            let idx_high: Vec<usize> = pairs.iter().map(|(_, q)| q.y * w + q.x).collect();
            boundaries.push(BoundaryPlan {
                low,
                high,
                stencil_low: Stencil::build(&mask_low, w, h, &idx_low),
                stencil_high: Stencil::build(&mask_high, w, h, &idx_high),
                pairs,
            });
        }
        Ok(Self {
            width: w,
            height: h,
            region_count: rs.region_count(),
            strip_width,
            boundaries,
            kernel: SobelKernel::standard().flat(),
        })
    }

    pub fn strip_width(&self) -> usize {
        self.strip_width
    }

    pub fn boundary_count(&self) -> usize {
        self.boundaries.len()
    }

    fn check(&self, latents: &[LatentGrid]) -> Result<(), GuidanceError> {
        if latents.len() != self.region_count {
            return Err(GuidanceError::LatentCount {
                expected: self.region_count,
                found: latents.len(),
            });
        }
        for (id, z) in latents.iter().enumerate() {
            if z.width() != self.width || z.height() != self.height || z.channels() != latents[0].channels() {
                return Err(GuidanceError::LatentSize(id as RegionId));
            }
        }
        Ok(())
    }

    fn boundary_vectors(&self, b: &BoundaryPlan, latents: &[LatentGrid]) -> BoundaryGradientPair {
        let c = latents[0].channels();
        let n = b.pairs.len();
        let mut g = Vec::with_capacity(n);
        let mut g_prime = Vec::with_capacity(n);
        for m in 0..n {
            let mut a = vec![0.0; 2 * c];
            let mut bb = vec![0.0; 2 * c];
            b.stencil_low.gradient_at(&self.kernel, &latents[b.low as usize], m, &mut a);
            b.stencil_high.gradient_at(&self.kernel, &latents[b.high as usize], m, &mut bb);
            g.push(a);
            g_prime.push(bb);
        }
        BoundaryGradientPair {
            boundary: (b.low, b.high),
            pairs: b.pairs.clone(),
            g,
            g_prime,
        }
    }

    /// Matched gradient vectors for every boundary, in boundary-id order.
    /// `latents` is indexed by region id.
    pub fn gradients(&self, latents: &[LatentGrid]) -> Result<Vec<BoundaryGradientPair>, GuidanceError> {
        self.check(latents)?;
        Ok(self.boundaries.iter().map(|b| self.boundary_vectors(b, latents)).collect())
    }

    pub fn loss(&self, latents: &[LatentGrid]) -> Result<f64, GuidanceError> {
        Ok(gradient_consistency_loss(&self.gradients(latents)?))
    }

    /// Loss value and `∂L/∂ẑ_i` for every region latent.
    pub fn loss_and_gradient(&self, latents: &[LatentGrid]) -> Result<(f64, Vec<LatentGrid>), GuidanceError> {
        self.check(latents)?;
        let mut grads: Vec<LatentGrid> = latents.iter().map(|z| LatentGrid::zeros(z.shape())).collect();
        let mut loss = 0.0;
        let c = latents[0].channels();
        let mut a = vec![0.0; 2 * c];
        let mut bv = vec![0.0; 2 * c];
        let mut da = vec![0.0; 2 * c];
        let mut db = vec![0.0; 2 * c];
        for b in &self.boundaries {
            let n = b.pairs.len();
            let scale = 1.0 / n as f64;
            let mut mean_cos2 = 0.0;
            for m in 0..n {
                b.stencil_low.gradient_at(&self.kernel, &latents[b.low as usize], m, &mut a);
                b.stencil_high.gradient_at(&self.kernel, &latents[b.high as usize], m, &mut bv);
                let (cos2, has_grad) = cos2_and_grad(&a, &bv, &mut da, &mut db);
                mean_cos2 += cos2 * scale;
                if has_grad {
                    // L contains -cos²/n for this pair
                    da.iter_mut().chain(db.iter_mut()).for_each(|v| *v *= -scale);
                    b.stencil_low.scatter_adjoint(&self.kernel, m, &da, &mut grads[b.low as usize]);
                    b.stencil_high.scatter_adjoint(&self.kernel, m, &db, &mut grads[b.high as usize]);
                }
            }
            loss += 1.0 - mean_cos2;
        }
        Ok((loss, grads))
    }
}

/// `cos²(a, b)` and its partial derivatives. Returns `(0, false)` when either
/// vector has zero norm.
fn cos2_and_grad(a: &[f64], b: &[f64], da: &mut [f64], db: &mut [f64]) -> (f64, bool) {
    let aa: f64 = a.iter().map(|v| v * v).sum();
    let bb: f64 = b.iter().map(|v| v * v).sum();
    if aa == 0.0 || bb == 0.0 {
        return (0.0, false);
    }
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos2 = ab * ab / (aa * bb);
    // d/da (ab)²/(aa·bb) = 2ab/(aa·bb) · b - 2(ab)²/(aa²·bb) · a
    let ka = 2.0 * ab / (aa * bb);
    let la = 2.0 * cos2 / aa;
    let lb = 2.0 * cos2 / bb;
    for k in 0..a.len() {
        da[k] = ka * b[k] - la * a[k];
        db[k] = ka * a[k] - lb * b[k];
    }
    (cos2, true)
}

/// Cosine similarity with the zero-vector convention `cos(0, ·) = 0`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let aa: f64 = a.iter().map(|v| v * v).sum();
    let bb: f64 = b.iter().map(|v| v * v).sum();
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Matched gradients for boundary `{i, j}` with strip width `k`.
pub fn boundary_gradients(
    latents: &[LatentGrid],
    rs: &RegionSet,
    boundary: (RegionId, RegionId),
    k: usize,
) -> Result<BoundaryGradientPair, GuidanceError> {
    let (i, j) = boundary;
    if !rs.is_adjacent(i, j) {
        return Err(GeometryError::NotAdjacent(i, j).into());
    }
    let plan = GuidancePlan::new(rs, k)?;
    plan.check(latents)?;
    let b = plan
        .boundaries
        .iter()
        .find(|b| (b.low, b.high) == (i.min(j), i.max(j)))
        .expect("adjacent pair has a plan");
    Ok(plan.boundary_vectors(b, latents))
}

/// `Σ_b (1 - mean cos²)` over the given boundaries; 0 when there are none.
pub fn gradient_consistency_loss(boundaries: &[BoundaryGradientPair]) -> f64 {
    boundaries
        .iter()
        .map(|b| {
            let n = b.g.len();
            debug_assert!(n > 0 && n == b.g_prime.len());
            let mean: f64 = b
                .g
                .iter()
                .zip(&b.g_prime)
                .map(|(a, c)| cosine(a, c).powi(2))
                .sum::<f64>()
                / n as f64;
            1.0 - mean
        })
        .sum()
}

/// `∂L/∂ẑ_i` for every region latent (indexed by region id).
pub fn loss_gradient(latents: &[LatentGrid], rs: &RegionSet, k: usize) -> Result<Vec<LatentGrid>, GuidanceError> {
    Ok(GuidancePlan::new(rs, k)?.loss_and_gradient(latents)?.1)
}

/// `z - η · g / max(‖g‖∞, 1e-8)`.
pub fn apply_guidance(z: &LatentGrid, g: &LatentGrid, eta: f64) -> Result<LatentGrid, GuidanceError> {
    z.ensure_same_shape(g)?;
    if !eta.is_finite() || eta < 0.0 {
        return Err(GuidanceError::InvalidStep(eta));
    }
    if !z.is_finite() || !g.is_finite() {
        return Err(GuidanceError::NonFinite);
    }
    let norm = g.max_abs().max(NORM_FLOOR);
    let mut out = z.clone();
    out.axpy(-eta / norm, g);
    Ok(out)
}
