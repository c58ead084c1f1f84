//! Ghost-imaging physics, classical baselines and image metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{abs, exp, log10, pow10, signum0, sqrt};
use crate::rng::rng_from_seed;

/// Row-major grayscale image with values in `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image must have at least one pixel".into()));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch { what: "image values", expected: height * width, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("pixel {i} = {} outside [0,1]", values[i])));
        }
        Ok(Image { height, width, values })
    }

    /// Clamps into `[0,1]`; NaN is rejected.
    pub fn clamped(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("image pixel".into()));
        }
        Self::new(height, width, values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn constant(height: usize, width: usize, v: f64) -> Result<Self> {
        Self::new(height, width, vec![v; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    fn check_same_shape(&self, other: &Image) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "{}×{} vs {}×{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// `M` binary illumination patterns over an `height × width` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    count: usize,
    height: usize,
    width: usize,
    seed: Option<u64>,
    data: Vec<u8>,
}

impl PatternSet {
    /// i.i.d. Bernoulli(1/2) pixels.
    pub fn generate(count: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        if count == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("empty pattern set {count}×{height}×{width}")));
        }
        let mut rng = rng_from_seed(seed);
        let data = (0..count * height * width).map(|_| rng.random::<bool>() as u8).collect();
        Ok(PatternSet { count, height, width, seed: Some(seed), data })
    }

    /// Explicit rows; entries must be 0 or 1.
    pub fn from_rows(height: usize, width: usize, rows: &[Vec<u8>]) -> Result<Self> {
        let n = height * width;
        if rows.is_empty() || n == 0 {
            return Err(Error::InvalidArgument("empty pattern set".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for (j, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::LengthMismatch { what: "pattern row", expected: n, actual: r.len() });
            }
            if r.iter().any(|&v| v > 1) {
                return Err(Error::InvalidArgument(format!("pattern {j} is not binary")));
            }
            data.extend_from_slice(r);
        }
        Ok(PatternSet { count: rows.len(), height, width, seed: None, data })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, j: usize) -> &[u8] {
        let n = self.pixels();
        &self.data[j * n..(j + 1) * n]
    }

    /// First `m` patterns.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.count {
            return Err(Error::InvalidArgument(format!("cannot take {m} of {} patterns", self.count)));
        }
        Ok(PatternSet { count: m, data: self.data[..m * self.pixels()].to_vec(), ..self.clone() })
    }

    /// `H x` for a flattened image.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.pixels() {
            return Err(Error::LengthMismatch { what: "image pixels", expected: self.pixels(), actual: x.len() });
        }
        Ok((0..self.count)
            .map(|j| self.row(j).iter().zip(x).filter(|(&h, _)| h != 0).map(|(_, v)| v).sum())
            .collect())
    }

    /// `Hᵀ r`
    pub fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.count {
            return Err(Error::LengthMismatch { what: "bucket residual", expected: self.count, actual: r.len() });
        }
        let mut out = vec![0.0; self.pixels()];
        for (j, &rj) in r.iter().enumerate() {
            for (o, &h) in out.iter_mut().zip(self.row(j)) {
                if h != 0 {
                    *o += rj;
                }
            }
        }
        Ok(out)
    }
}

/// Detected bucket values with the noise level that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSignals {
    pub values: Vec<f64>,
    pub noise_sigma: f64,
    pub dsnr: Option<f64>,
}

impl BucketSignals {
    pub fn noiseless(values: Vec<f64>) -> Self {
        BucketSignals { values, noise_sigma: 0.0, dsnr: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        crate::math::mean(&self.values)
    }
}

/// `I_j = Σ_x H_j(x) T(x)`
pub fn forward_buckets(patterns: &PatternSet, image: &Image) -> Result<BucketSignals> {
    if (patterns.height, patterns.width) != (image.height, image.width) {
        return Err(Error::ShapeMismatch(format!(
            "patterns are {}×{}, image is {}×{}",
            patterns.height, patterns.width, image.height, image.width
        )));
    }
    Ok(BucketSignals::noiseless(patterns.apply(&image.values)?))
}

/// `σ = ⟨I⟩ / 10^(dSNR/10)`
pub fn sigma_from_dsnr(mean_bucket: f64, dsnr: f64) -> Result<f64> {
    if !(mean_bucket > 0.0) {
        return Err(Error::InvalidArgument(format!("mean bucket must be positive, got {mean_bucket}")));
    }
    Ok(mean_bucket / pow10(dsnr / 10.0))
}

/// `dSNR = 10 log10(⟨I⟩/σ)`
pub fn dsnr_from_sigma(mean_bucket: f64, sigma: f64) -> Result<f64> {
    if !(mean_bucket > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("dSNR needs positive mean and σ, got {mean_bucket}, {sigma}")));
    }
    Ok(10.0 * log10(mean_bucket / sigma))
}

/// Adds i.i.d. `N(0, σ²)` to every bucket.
pub fn add_detection_noise(buckets: &BucketSignals, sigma: f64, seed: u64) -> Result<BucketSignals> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise σ must be finite and ≥ 0, got {sigma}")));
    }
    let mut values = buckets.values.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("valid σ");
        let mut rng = rng_from_seed(seed);
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let dsnr = if sigma > 0.0 { dsnr_from_sigma(buckets.mean(), sigma).ok() } else { None };
    Ok(BucketSignals { values, noise_sigma: sigma, dsnr })
}

/// Affine map onto `[0,1]`; a constant input maps to zeros.
pub fn min_max_rescale(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// `O(x) = (1/M) Σ_j (I_j − ⟨I⟩)(H_j(x) − ⟨H(x)⟩)`, unscaled.
pub fn correlation_gi_raw(patterns: &PatternSet, buckets: &BucketSignals) -> Result<Vec<f64>> {
    let m = patterns.count;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 2 patterns, got {m}")));
    }
    if buckets.len() != m {
        return Err(Error::LengthMismatch { what: "buckets", expected: m, actual: buckets.len() });
    }
    let mean_i = buckets.mean();
    let mut mean_h = vec![0.0; patterns.pixels()];
    for j in 0..m {
        for (a, &h) in mean_h.iter_mut().zip(patterns.row(j)) {
            *a += h as f64;
        }
    }
    mean_h.iter_mut().for_each(|a| *a /= m as f64);
    let mut out = vec![0.0; patterns.pixels()];
    for j in 0..m {
        let di = buckets.values[j] - mean_i;
        for ((o, &h), mh) in out.iter_mut().zip(patterns.row(j)).zip(&mean_h) {
            *o += di * (h as f64 - mh);
        }
    }
    out.iter_mut().for_each(|o| *o /= m as f64);
    Ok(out)
}

/// Correlation reconstruction rescaled to `[0,1]`.
pub fn correlation_gi(patterns: &PatternSet, buckets: &BucketSignals) -> Result<Image> {
    let raw = correlation_gi_raw(patterns, buckets)?;
    Image::new(patterns.height, patterns.width, min_max_rescale(&raw))
}

/// Anisotropic TV `Σ |O(r,c+1) − O(r,c)| + |O(r+1,c) − O(r,c)|`; differences
/// past the last row/column are zero.
pub fn tv_norm(values: &[f64], height: usize, width: usize) -> f64 {
    let mut tv = 0.0;
    for r in 0..height {
        for c in 0..width {
            let v = values[r * width + c];
            if c + 1 < width {
                tv += abs(values[r * width + c + 1] - v);
            }
            if r + 1 < height {
                tv += abs(values[(r + 1) * width + c] - v);
            }
        }
    }
    tv
}

/// Subgradient of [`tv_norm`] with `sign(0) = 0`.
pub fn tv_gradient(values: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut g = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width {
                let s = signum0(values[i + 1] - values[i]);
                g[i + 1] += s;
                g[i] -= s;
            }
            if r + 1 < height {
                let s = signum0(values[i + width] - values[i]);
                g[i + width] += s;
                g[i] -= s;
            }
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvCsConfig {
    pub mu: f64,
    pub iterations: usize,
    /// Step size; `None` uses `1/‖H‖²` from power iteration.
    #[serde(default)]
    pub lr: Option<f64>,
}

impl Default for TvCsConfig {
    fn default() -> Self {
        TvCsConfig { mu: 1e-6, iterations: 500, lr: None }
    }
}

/// Largest eigenvalue of `HᵀH` by power iteration.
pub fn operator_norm_sq(patterns: &PatternSet) -> Result<f64> {
    let n = patterns.pixels();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let norm = sqrt(v.iter().map(|x| x * x).sum());
        v.iter_mut().for_each(|x| *x /= norm);
        let w = patterns.adjoint(&patterns.apply(&v)?)?;
        let next = crate::math::dot(&v, &w);
        v = w;
        if abs(next - lambda) <= 1e-10 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

/// `½‖I − HO‖² + μ TV(O)`
pub fn tvcs_objective(patterns: &PatternSet, buckets: &BucketSignals, values: &[f64], mu: f64) -> Result<f64> {
    let r = patterns.apply(values)?;
    let data: f64 = r.iter().zip(&buckets.values).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * data + mu * tv_norm(values, patterns.height, patterns.width))
}

/// Accelerated projected (sub)gradient descent on `½‖I − HO‖² + μ TV(O)` over
/// `O ∈ [0,1]^N`, started from the best constant image. Returns the best iterate.
pub fn tvcs_reconstruct(patterns: &PatternSet, buckets: &BucketSignals, config: &TvCsConfig) -> Result<Image> {
    if !(config.mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("TV weight must be ≥ 0, got {}", config.mu)));
    }
    if buckets.len() != patterns.count {
        return Err(Error::LengthMismatch { what: "buckets", expected: patterns.count, actual: buckets.len() });
    }
    let (h, w, n) = (patterns.height, patterns.width, patterns.pixels());
    let lr = match config.lr {
        Some(lr) if lr > 0.0 => lr,
        Some(lr) => return Err(Error::InvalidArgument(format!("step size must be positive, got {lr}"))),
        None => 1.0 / operator_norm_sq(patterns)?.max(1e-12),
    };
    let ones = patterns.apply(&vec![1.0; n])?;
    let c = (crate::math::dot(&ones, &buckets.values) / crate::math::norm_sq(&ones).max(1e-300)).clamp(0.0, 1.0);
    let mut x = vec![c; n];
    let mut y = x.clone();
    let mut t = 1.0;
    let mut best = x.clone();
    let mut best_obj = tvcs_objective(patterns, buckets, &x, config.mu)?;
    for _ in 0..config.iterations {
        let r: Vec<f64> = patterns.apply(&y)?.iter().zip(&buckets.values).map(|(a, b)| a - b).collect();
        let g_data = patterns.adjoint(&r)?;
        let g_tv = tv_gradient(&y, h, w);
        let next: Vec<f64> = y
            .iter()
            .zip(g_data.iter().zip(&g_tv))
            .map(|(yi, (gd, gt))| (yi - lr * (gd + config.mu * gt)).clamp(0.0, 1.0))
            .collect();
        let t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t));
        y = next.iter().zip(&x).map(|(a, b)| a + ((t - 1.0) / t_next) * (a - b)).map(|v| v.clamp(0.0, 1.0)).collect();
        x = next;
        t = t_next;
        let obj = tvcs_objective(patterns, buckets, &x, config.mu)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite("TV-CS objective".into()));
        }
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&x);
        }
    }
    Image::new(h, w, best)
}

/// `10 log10(1/MSE)`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse <= 1e-10 {
        return Ok(100.0);
    }
    Ok((10.0 * log10(1.0 / mse)).min(100.0))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma))).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = (0..k).map(|i| taps[i] * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = (0..k).map(|i| taps[i] * rows[(r + i) * wo + c]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ 1.5, K1 0.01, K2 0.03, range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (&a.values, &b.values);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let sxx = filter_valid(&xx, h, w, &taps);
    let syy = filter_valid(&yy, h, w, &taps);
    let sxy = filter_valid(&xy, h, w, &taps);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Synthetic test objects.
pub mod phantoms {
    use super::*;

    fn render(size: usize, f: impl Fn(f64, f64) -> f64) -> Image {
        let s = size as f64;
        let values = (0..size * size)
            .map(|i| f(((i % size) as f64 + 0.5) / s, ((i / size) as f64 + 0.5) / s).clamp(0.0, 1.0))
            .collect();
        Image::new(size, size, values).expect("phantom in range")
    }

    fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let t = (((px - a.0) * dx + (py - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
        sqrt(qx * qx + qy * qy)
    }

    /// Binary digit "2".
    pub fn glyph(size: usize) -> Image {
        let stroke = 0.06;
        render(size, |x, y| {
            let (cx, cy, r) = (0.5, 0.36, 0.2);
            let d = sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
            let on_arc = abs(d - r) < stroke && (y <= cy || (x >= cx && y <= cy + 0.12));
            let on_diag = segment_distance(x, y, (0.66, 0.5), (0.26, 0.8)) < stroke;
            let on_base = (0.22..=0.8).contains(&x) && abs(y - 0.8) < stroke;
            (on_arc || on_diag || on_base) as u8 as f64
        })
    }

    /// Binary aircraft-like silhouette: fuselage, swept wings and tail.
    pub fn plane(size: usize) -> Image {
        render(size, |x, y| {
            let fuselage = ((x - 0.5) / 0.07) * ((x - 0.5) / 0.07) + ((y - 0.5) / 0.38) * ((y - 0.5) / 0.38) <= 1.0;
            let wing = y > 0.38 && y < 0.58 && abs(x - 0.5) < 0.42 * (1.0 - (y - 0.38) / 0.4) && y > 0.38 + 0.35 * abs(x - 0.5);
            let tail = y > 0.78 && y < 0.86 && abs(x - 0.5) < 0.18;
            (fuselage || wing || tail) as u8 as f64
        })
    }

    /// Grayscale block with a smooth texture on a dark background.
    pub fn textured_block(size: usize) -> Image {
        render(size, |x, y| {
            if (0.2..0.8).contains(&x) && (0.2..0.8).contains(&y) {
                0.6 + 0.3 * crate::math::sin(18.0 * x) * crate::math::cos(11.0 * y)
            } else {
                0.05
            }
        })
    }

    pub fn by_name(name: &str, size: usize) -> Result<Image> {
        match name {
            "glyph" => Ok(glyph(size)),
            "plane" => Ok(plane(size)),
            "textured_block" | "block" => Ok(textured_block(size)),
            other => Err(Error::InvalidArgument(format!("unknown phantom `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests;
