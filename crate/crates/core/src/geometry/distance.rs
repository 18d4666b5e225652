use super::{Pixel, RegionId};

/// Boundary margin in pixels for a latent of `height×width`:
/// `ceil(min(height, width) * fraction)`, never below one pixel.
pub fn margin_for(height: usize, width: usize, fraction: f64) -> f64 {
    let m = (height.min(width) as f64 * fraction).ceil();
    m.max(1.0)
}

/// Exact squared Euclidean distance from every pixel to the nearest seed.
///
/// Separable lower-envelope-of-parabolas transform: one pass down each
/// column, one pass along each row. Pixels with no seed anywhere get
/// `f64::INFINITY`.
pub fn squared_edt(width: usize, height: usize, seeds: &[Pixel]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; width * height];
    for p in seeds {
        grid[p.y * width + p.x] = 0.0;
    }
    let mut buf_in = vec![0.0; width.max(height)];
    let mut buf_out = vec![0.0; width.max(height)];

    for x in 0..width {
        for y in 0..height {
            buf_in[y] = grid[y * width + x];
        }
        transform_1d(&buf_in[..height], &mut buf_out[..height]);
        for y in 0..height {
            grid[y * width + x] = buf_out[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        buf_in[..width].copy_from_slice(row);
        transform_1d(&buf_in[..width], &mut buf_out[..width]);
        row.copy_from_slice(&buf_out[..width]);
    }
    grid
}

/// `out[q] = min_p (q - p)^2 + f[p]` over finite `f[p]`.
fn transform_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    // vertices of the lower envelope and the boundaries between them
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + (p * p) as f64;
                    let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
                    if s <= *z.last().expect("z tracks v") {
                        v.pop();
                        z.pop();
                        continue;
                    }
                    v.push(q);
                    z.push(s);
                    break;
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Per-pixel distance `d_{i,j}` from region `i` to its boundary with `j`,
/// clipped to `[0, margin]`.
///
/// Values are stored for the whole canvas; only pixels of region `i` carry
/// meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    region: RegionId,
    neighbor: RegionId,
    width: usize,
    height: usize,
    margin: f64,
    unclipped: Vec<f64>,
}

impl DistanceField {
    pub(crate) fn from_seeds(
        region: RegionId,
        neighbor: RegionId,
        width: usize,
        height: usize,
        seeds: &[Pixel],
        margin: f64,
    ) -> Self {
        let unclipped = squared_edt(width, height, seeds)
            .into_iter()
            .map(f64::sqrt)
            .collect();
        Self {
            region,
            neighbor,
            width,
            height,
            margin,
            unclipped,
        }
    }

    pub fn region(&self) -> RegionId {
        self.region
    }

    pub fn neighbor(&self) -> RegionId {
        self.neighbor
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Clipped distance at `(x, y)`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.at(y * self.width + x)
    }

    /// Clipped distance at flat index `k`.
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.unclipped[k].min(self.margin)
    }

    pub fn unclipped(&self) -> &[f64] {
        &self.unclipped
    }

    pub fn clipped(&self) -> Vec<f64> {
        self.unclipped.iter().map(|d| d.min(self.margin)).collect()
    }
}
