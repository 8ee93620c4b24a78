//! Per-channel statistics, dataset-wide mean reflectance images, and the
//! SCI similarity machinery.
//!
//! SCI between two images is per-pixel 1 - |a-b|/(a+b+eps); a map is
//! aggregated to a scalar as mean * (1 - population std).

use crate::cube::Dataset;
use crate::{Error, Result};

/// Stabilizer used for the SCI denominator and spectral normalizations.
pub const EPSILON: f64 = 1e-8;

/// Per-channel descriptors pooled over every pixel of the dataset.
/// `constant[c]` flags channels with zero variance, whose coefficient of
/// variation and self-correlation are defined as 0.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub dynamic_range: Vec<f64>,
    pub coeff_variation: Vec<f64>,
    pub self_correlation: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in pairs {
        n += 1.0;
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    if n == 0.0 {
        return 0.0;
    }
    let va = (saa / n - (sa / n) * (sa / n)).max(0.0);
    let vb = (sbb / n - (sb / n) * (sb / n)).max(0.0);
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let cov = sab / n - (sa / n) * (sb / n);
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Pooled statistics over all tiles. Self-correlation is the mean over tiles
/// of the average of the lag-1 x-shift and y-shift Pearson correlations of
/// each band image (valid overlap region only).
pub fn compute_channel_stats(ds: &Dataset) -> Result<ChannelStats> {
    let (h, w, c) = ds.tile_shape();
    if ds.tiles.is_empty() {
        return Err(Error::Shape("empty dataset".into()));
    }
    let mut min = vec![f64::INFINITY; c];
    let mut max = vec![f64::NEG_INFINITY; c];
    let mut sum = vec![0.0f64; c];
    let mut sumsq = vec![0.0f64; c];
    let mut selfc = vec![0.0f64; c];
    let n_pixels = (ds.tiles.len() * h * w) as f64;
    for tile in &ds.tiles {
        for ch in 0..c {
            let band = tile.band(ch);
            for &v in band {
                let v = v as f64;
                min[ch] = min[ch].min(v);
                max[ch] = max[ch].max(v);
                sum[ch] += v;
                sumsq[ch] += v * v;
            }
            let at = |y: usize, x: usize| band[y * w + x] as f64;
            let rx = pearson(
                (0..h).flat_map(|y| (0..w - 1).map(move |x| (x, y))).map(|(x, y)| (at(y, x), at(y, x + 1))),
            );
            let ry = pearson(
                (0..h - 1).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| (at(y, x), at(y + 1, x))),
            );
            let parts = usize::from(w > 1) + usize::from(h > 1);
            if parts > 0 {
                selfc[ch] += (rx + ry) / parts as f64;
            }
        }
    }
    let n_tiles = ds.tiles.len() as f64;
    let mut stats = ChannelStats {
        min,
        max,
        mean: vec![0.0; c],
        std: vec![0.0; c],
        dynamic_range: vec![0.0; c],
        coeff_variation: vec![0.0; c],
        self_correlation: vec![0.0; c],
        constant: vec![false; c],
    };
    for ch in 0..c {
        let mean = sum[ch] / n_pixels;
        let var = (sumsq[ch] / n_pixels - mean * mean).max(0.0);
        let std = var.sqrt();
        stats.mean[ch] = mean;
        stats.std[ch] = std;
        stats.dynamic_range[ch] = stats.max[ch] - stats.min[ch];
        let constant = stats.dynamic_range[ch] == 0.0;
        stats.constant[ch] = constant;
        stats.coeff_variation[ch] = if mean.abs() < EPSILON || constant { 0.0 } else { std / mean };
        stats.self_correlation[ch] = if constant { 0.0 } else { selfc[ch] / n_tiles };
    }
    Ok(stats)
}

/// Per-channel H×W pixelwise mean over the dataset's tiles.
#[derive(Debug, Clone)]
pub struct MeanReflectanceStack {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f64>>,
}

pub fn mean_reflectance(ds: &Dataset) -> Result<MeanReflectanceStack> {
    if ds.tiles.is_empty() {
        return Err(Error::Shape("mean_reflectance of empty dataset".into()));
    }
    let (h, w, c) = ds.tile_shape();
    let mut images = vec![vec![0.0f64; h * w]; c];
    for tile in &ds.tiles {
        for ch in 0..c {
            for (acc, &v) in images[ch].iter_mut().zip(tile.band(ch)) {
                *acc += v as f64;
            }
        }
    }
    let inv = 1.0 / ds.tiles.len() as f64;
    for img in &mut images {
        for v in img {
            *v *= inv;
        }
    }
    Ok(MeanReflectanceStack { height: h, width: w, images })
}

/// Per-pixel SCI map: 1 - |a-b|/(a+b+eps). Inputs must be nonnegative.
pub fn sci_map(a: &[f64], b: &[f64], epsilon: f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| 1.0 - (x - y).abs() / (x + y + epsilon)).collect()
}

/// Aggregate a map to its product score: mean * (1 - population std).
pub fn sci_prod(map: &[f64]) -> f64 {
    // constant maps short-circuit so the zero-variance case is exact
    if map.iter().all(|&v| v == map[0]) {
        return map[0];
    }
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    mean * (1.0 - var.sqrt())
}

/// C×C symmetric matrix of pairwise SCI product scores between channel mean
/// reflectance images. Each unordered pair is computed once.
#[derive(Debug, Clone)]
pub struct SciMatrix {
    pub channels: usize,
    pub values: Vec<f64>,
    pub epsilon: f64,
}

impl SciMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }

    /// CSV with 9 significant digits, C rows by C columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.channels {
            for j in 0..self.channels {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{:.8e}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn sci_matrix(stack: &MeanReflectanceStack, epsilon: f64) -> SciMatrix {
    let c = stack.images.len();
    let mut values = vec![0.0f64; c * c];
    for i in 0..c {
        for j in i..c {
            let score = sci_prod(&sci_map(&stack.images[i], &stack.images[j], epsilon));
            values[i * c + j] = score;
            values[j * c + i] = score;
        }
    }
    SciMatrix { channels: c, values, epsilon }
}
