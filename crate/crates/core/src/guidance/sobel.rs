//! 5×5 Sobel derivatives with region-masked replicate padding.

use crate::latent::{LatentGrid, Shape};

const SMOOTH: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
const DERIV: [f64; 5] = [-1.0, -2.0, 0.0, 2.0, 1.0];

/// Number of taps in a 5×5 stencil.
pub const TAPS: usize = 25;

/// Horizontal and vertical 5×5 derivative kernels, indexed `[dy + 2][dx + 2]`
/// and applied as a correlation: `g(p) = Σ K[o] · z(p + o)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobelKernel {
    pub kx: [[f64; 5]; 5],
    pub ky: [[f64; 5]; 5],
}

impl Default for SobelKernel {
    fn default() -> Self {
        Self::standard()
    }
}

impl SobelKernel {
    /// Separable extension: smoothing `[1,4,6,4,1]` across the derivative
    /// axis, `[-1,-2,0,2,1]` along it.
    pub fn standard() -> Self {
        let mut kx = [[0.0; 5]; 5];
        let mut ky = [[0.0; 5]; 5];
        for r in 0..5 {
            for c in 0..5 {
                kx[r][c] = SMOOTH[r] * DERIV[c];
                ky[r][c] = DERIV[r] * SMOOTH[c];
            }
        }
        Self { kx, ky }
    }

    /// Kernels flattened in tap order `(dy, dx)` row-major.
    pub fn flat(&self) -> ([f64; TAPS], [f64; TAPS]) {
        let mut fx = [0.0; TAPS];
        let mut fy = [0.0; TAPS];
        for r in 0..5 {
            for c in 0..5 {
                fx[r * 5 + c] = self.kx[r][c];
                fy[r * 5 + c] = self.ky[r][c];
            }
        }
        (fx, fy)
    }
}

/// For each requested pixel, the 25 flat source indices its stencil reads
/// after masked replicate padding.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub pixels: Vec<usize>,
    pub taps: Vec<[usize; TAPS]>,
}

/// Flat index of the in-region pixel nearest to `(qx, qy)`, which may lie
/// outside the canvas. Ties go to the smaller row, then column.
fn nearest_in_region(mask: &[bool], width: usize, height: usize, qx: isize, qy: isize) -> usize {
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height;
    if inside(qx, qy) && mask[qy as usize * width + qx as usize] {
        return qy as usize * width + qx as usize;
    }
    let mut best: Option<(isize, isize, isize)> = None; // (d2, y, x)
    let limit = (width.max(height) + 4) as isize;
    for r in 1..=limit {
        for dy in -r..=r {
            let on_edge_row = dy == -r || dy == r;
            let step = if on_edge_row { 1 } else { 2 * r };
            let mut dx = -r;
            while dx <= r {
                let (x, y) = (qx + dx, qy + dy);
                if inside(x, y) && mask[y as usize * width + x as usize] {
                    let cand = (dx * dx + dy * dy, y, x);
                    if best.is_none_or(|b| cand < b) {
                        best = Some(cand);
                    }
                }
                dx += step;
            }
        }
        if let Some((d2, _, _)) = best {
            if d2 < (r + 1) * (r + 1) {
                break;
            }
        }
    }
    let (_, y, x) = best.expect("mask is non-empty");
    y as usize * width + x as usize
}

impl Stencil {
    pub fn build(mask: &[bool], width: usize, height: usize, pixels: &[usize]) -> Self {
        let taps = pixels
            .iter()
            .map(|&k| {
                let (px, py) = ((k % width) as isize, (k / width) as isize);
                let mut t = [0usize; TAPS];
                for dy in -2..=2isize {
                    for dx in -2..=2isize {
                        t[((dy + 2) * 5 + dx + 2) as usize] = nearest_in_region(mask, width, height, px + dx, py + dy);
                    }
                }
                t
            })
            .collect();
        Self {
            pixels: pixels.to_vec(),
            taps,
        }
    }

    /// Gradient vector `(gx_0, gy_0, gx_1, gy_1, ..)` at stencil entry `n`.
    pub fn gradient_at(&self, kernel: &([f64; TAPS], [f64; TAPS]), z: &LatentGrid, n: usize, out: &mut [f64]) {
        let plane = z.shape().plane();
        let data = z.as_slice();
        let taps = &self.taps[n];
        for c in 0..z.channels() {
            let ch = &data[c * plane..(c + 1) * plane];
            // kernels sum to zero, so offsetting by the centre value is exact
            // in real arithmetic and makes flat patches give exactly zero
            let centre = ch[taps[TAPS / 2]];
            let (mut gx, mut gy) = (0.0, 0.0);
            for t in 0..TAPS {
                let v = ch[taps[t]] - centre;
                gx += kernel.0[t] * v;
                gy += kernel.1[t] * v;
            }
            out[2 * c] = gx;
            out[2 * c + 1] = gy;
        }
    }

    /// Adjoint of [`Stencil::gradient_at`]: scatters `upstream` (same layout
    /// as the gradient vector) into `grad_z`.
    pub fn scatter_adjoint(
        &self,
        kernel: &([f64; TAPS], [f64; TAPS]),
        n: usize,
        upstream: &[f64],
        grad_z: &mut LatentGrid,
    ) {
        let plane = grad_z.shape().plane();
        let channels = grad_z.channels();
        let data = grad_z.as_mut_slice();
        let taps = &self.taps[n];
        for c in 0..channels {
            let (ux, uy) = (upstream[2 * c], upstream[2 * c + 1]);
            if ux == 0.0 && uy == 0.0 {
                continue;
            }
            let ch = &mut data[c * plane..(c + 1) * plane];
            for t in 0..TAPS {
                ch[taps[t]] += kernel.0[t] * ux + kernel.1[t] * uy;
            }
        }
    }
}

/// Per-channel 5×5 Sobel of `z` restricted to `mask`. Output has `2C`
/// channels (`gx`, `gy` interleaved per input channel) and is zero outside
/// the mask. Samples outside the mask read the nearest in-mask pixel.
pub fn masked_sobel(z: &LatentGrid, mask: &[bool]) -> LatentGrid {
    let (w, h) = (z.width(), z.height());
    assert_eq!(mask.len(), w * h, "mask does not match latent plane");
    assert!(mask.iter().any(|&m| m), "mask must be non-empty");
    let pixels: Vec<usize> = (0..w * h).filter(|&k| mask[k]).collect();
    let stencil = Stencil::build(mask, w, h, &pixels);
    let kernel = SobelKernel::standard().flat();
    let c = z.channels();
    let mut out = LatentGrid::zeros(Shape::new(2 * c, h, w));
    let mut g = vec![0.0; 2 * c];
    let plane = w * h;
    for (n, &k) in stencil.pixels.iter().enumerate() {
        stencil.gradient_at(&kernel, z, n, &mut g);
        for (ch, v) in g.iter().enumerate() {
            out.as_mut_slice()[ch * plane + k] = *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_properties() {
        let k = SobelKernel::standard();
        let sx: f64 = k.kx.iter().flatten().sum();
        let sy: f64 = k.ky.iter().flatten().sum();
        assert_eq!(sx, 0.0);
        assert_eq!(sy, 0.0);
        for r in 0..5 {
            for c in 0..5 {
                // antisymmetric along the derivative axis
                assert_eq!(k.kx[r][c], -k.kx[r][4 - c]);
                assert_eq!(k.ky[r][c], -k.ky[4 - r][c]);
                // clockwise quarter turn of kx gives ky
                assert_eq!(k.kx[4 - c][r], k.ky[r][c]);
            }
        }
    }

    #[test]
    fn constant_region_has_zero_gradient() {
        let z = LatentGrid::filled(Shape::new(2, 7, 9), 3.25);
        let mask: Vec<bool> = (0..63).map(|k| k % 9 < 5).collect();
        let g = masked_sobel(&z, &mask);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    /// Direct correlation with the 5×5 kernel and plain replicate padding.
    fn naive_full(z: &LatentGrid, c: usize, x: usize, y: usize) -> (f64, f64) {
        let k = SobelKernel::standard();
        let (w, h) = (z.width() as isize, z.height() as isize);
        let (mut gx, mut gy) = (0.0, 0.0);
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                let v = z.get(c, sy, sx);
                gx += k.kx[(dy + 2) as usize][(dx + 2) as usize] * v;
                gy += k.ky[(dy + 2) as usize][(dx + 2) as usize] * v;
            }
        }
        (gx, gy)
    }

    #[test]
    fn horizontal_ramp() {
        let a = 0.5;
        let z = LatentGrid::from_fn(Shape::new(1, 9, 11), |_, _, x| a * x as f64);
        let mask = vec![true; 99];
        let g = masked_sobel(&z, &mask);
        for y in 0..9 {
            for x in 0..11 {
                let (ox, oy) = naive_full(&z, 0, x, y);
                assert!((g.get(0, y, x) - ox).abs() < 1e-12);
                assert!((g.get(1, y, x) - oy).abs() < 1e-12);
            }
        }
        // interior: 16 * (2 + 2 + 2 + 2) * a
        for y in 0..9 {
            for x in 2..9 {
                assert!((g.get(0, y, x) - 128.0 * a).abs() < 1e-12);
                assert_eq!(g.get(1, y, x), 0.0);
            }
        }
    }

    #[test]
    fn single_pixel_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = LatentGrid::from_fn(Shape::new(3, 5, 5), |_, _, _| rng.random::<f64>());
        let mut mask = vec![false; 25];
        mask[12] = true;
        let g = masked_sobel(&z, &mask);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn never_reads_outside_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask: Vec<bool> = (0..100).map(|k| (k % 10) + (k / 10) < 10).collect();
        let base = LatentGrid::from_fn(Shape::new(1, 10, 10), |_, _, _| rng.random::<f64>());
        let mut other = base.clone();
        for (k, &m) in mask.iter().enumerate() {
            if !m {
                other.as_mut_slice()[k] = 1e6;
            }
        }
        assert_eq!(masked_sobel(&base, &mask), masked_sobel(&other, &mask));
    }

    #[test]
    fn nearest_in_region_tie_break() {
        // region is the two pixels (0,0) and (2,0); (1,0) is equidistant
        let mask = vec![true, false, true];
        assert_eq!(nearest_in_region(&mask, 3, 1, 1, 0), 0);
        // far outside the canvas still resolves
        assert_eq!(nearest_in_region(&mask, 3, 1, 5, -2), 2);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h, c) = (9, 8, 2);
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < 0.6).collect();
        let pixels: Vec<usize> = (0..w * h).filter(|&k| mask[k]).collect();
        let stencil = Stencil::build(&mask, w, h, &pixels);
        let kernel = SobelKernel::standard().flat();
        let x = LatentGrid::from_fn(Shape::new(c, h, w), |_, _, _| rng.random::<f64>() - 0.5);
        let ys: Vec<Vec<f64>> = pixels
            .iter()
            .map(|_| (0..2 * c).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let mut lhs = 0.0;
        let mut g = vec![0.0; 2 * c];
        let mut adj = LatentGrid::zeros(x.shape());
        for n in 0..pixels.len() {
            stencil.gradient_at(&kernel, &x, n, &mut g);
            lhs += g.iter().zip(&ys[n]).map(|(a, b)| a * b).sum::<f64>();
            stencil.scatter_adjoint(&kernel, n, &ys[n], &mut adj);
        }
        let rhs = x.dot(&adj);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
