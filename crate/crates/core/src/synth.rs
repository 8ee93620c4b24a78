//! Synthetic hyperspectral scenes with planted spectral-group structure,
//! used as ground truth for grouping recovery and training checks.
//!
//! Each tile's pixel spectrum is sum_g w_g(x,y) * profile_g(band) + noise.
//! The w_g are nonnegative smooth spatial fields (triple box blur of seeded
//! white noise); bands of planted group g draw dominantly from profile_g
//! with a small group-specific leak from the other fields.

use crate::cube::{Dataset, HyperCube, Split};
use crate::rng::{derive_path, Xoshiro256};
use crate::{Error, Result};

// stream salts; fixed so any (tile, group) field is derivable in isolation
const SALT_SHARED: u64 = 0x01;
const SALT_TILE: u64 = 0x02;
const SALT_NOISE: u64 = 0x03;

/// Weight of the group-independent global field mixed into every group's
/// spatial field. Models scene-wide structure (illumination, albedo) that
/// correlates all bands; masked groups then stay predictable from visible
/// ones without erasing per-group statistics.
const GLOBAL_MIX: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// K*: number of planted groups.
    pub planted_groups: usize,
    /// C: number of bands.
    pub channels: usize,
    /// profiles[g][b]: weight of field g in band b (K* smooth curves over C bands).
    pub profiles: Vec<Vec<f64>>,
    /// truth[b]: planted group of band b.
    pub truth: Vec<usize>,
    /// Box-blur radius (pixels) shaping the spatial fields.
    pub field_smoothness: usize,
    /// Additive Gaussian noise scale (pre-normalization units).
    pub noise_sigma: f64,
    /// Marginal exponent of each group's white noise (U[0,1]^e); distinct
    /// exponents give the groups distinguishable post-normalization statistics.
    pub field_exponents: Vec<f64>,
}

impl SyntheticSpec {
    /// Default planted layout: contiguous band blocks of near-equal size,
    /// smooth per-band amplitude in [0.7, 1.0], per-group leak levels evenly
    /// spaced in [0.05, 0.2], per-group noise exponents log-spaced in
    /// [0.5, 4.0].
    pub fn planted(
        planted_groups: usize,
        channels: usize,
        field_smoothness: usize,
        noise_sigma: f64,
    ) -> Result<Self> {
        if planted_groups < 2 {
            return Err(Error::config("/data/synthetic/planted_groups", "need at least 2 groups"));
        }
        if channels < planted_groups {
            return Err(Error::config("/data/synthetic/channels", "need at least one band per group"));
        }
        if noise_sigma < 0.0 {
            return Err(Error::config("/data/synthetic/noise_sigma", "must be nonnegative"));
        }
        let k = planted_groups;
        let c = channels;
        // contiguous blocks; first (c mod k) groups get one extra band
        let mut truth = Vec::with_capacity(c);
        let base = c / k;
        let extra = c % k;
        for g in 0..k {
            let size = base + usize::from(g < extra);
            truth.extend(std::iter::repeat(g).take(size));
        }
        // leak stays small so a group's own field dominates its bands; the
        // cross-group mixture would otherwise wash out per-group statistics
        let leak: Vec<f64> =
            (0..k).map(|g| 0.05 + 0.15 * g as f64 / (k - 1) as f64).collect();
        // smooth amplitude curve over bands, polynomial so it is platform-stable
        let amp = |b: usize| -> f64 {
            let u = if c > 1 { b as f64 / (c - 1) as f64 } else { 0.5 };
            0.7 + 0.3 * (4.0 * u * (1.0 - u))
        };
        let mut profiles = vec![vec![0.0; c]; k];
        for b in 0..c {
            let t = truth[b];
            for (g, profile) in profiles.iter_mut().enumerate() {
                profile[b] = amp(b) * if g == t { 1.0 } else { leak[t] };
            }
        }
        // log-spaced marginal exponents; adjacent groups then differ in
        // distribution shape by a constant factor rather than an additive step
        let field_exponents =
            (0..k).map(|g| 0.5 * 8f64.powf(g as f64 / (k - 1) as f64)).collect();
        Ok(SyntheticSpec {
            planted_groups: k,
            channels: c,
            profiles,
            truth,
            field_smoothness,
            noise_sigma,
            field_exponents,
        })
    }
}

/// One box-blur pass with a truncated window (mean over in-bounds neighbors),
/// applied separably in x then y.
fn box_blur_pass(img: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return img.to_vec();
    }
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut s = 0.0;
            for xx in lo..=hi {
                s += img[y * w + xx];
            }
            tmp[y * w + x] = s / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut s = 0.0;
            for yy in lo..=hi {
                s += tmp[yy * w + x];
            }
            out[y * w + x] = s / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Triple box blur; the generator's Gaussian stand-in.
pub fn blur_field(img: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let a = box_blur_pass(img, h, w, r);
    let b = box_blur_pass(&a, h, w, r);
    box_blur_pass(&b, h, w, r)
}

fn white_noise_field(rng: &mut Xoshiro256, hw: usize, exponent: f64) -> Vec<f64> {
    (0..hw).map(|_| rng.next_f64().powf(exponent)).collect()
}

/// Raw band-sequential tile values (no noise, no normalization) given the
/// per-group spatial fields. Exposed so degenerate field configurations can
/// be exercised directly in tests.
pub fn tile_from_fields(profiles: &[Vec<f64>], fields: &[Vec<f64>], hw: usize) -> Vec<f64> {
    let c = profiles.first().map_or(0, Vec::len);
    let mut data = vec![0.0; c * hw];
    for b in 0..c {
        let plane = &mut data[b * hw..(b + 1) * hw];
        for (g, field) in fields.iter().enumerate() {
            let p = profiles[g][b];
            if p != 0.0 {
                for (o, &f) in plane.iter_mut().zip(field) {
                    *o += p * f;
                }
            }
        }
    }
    data
}

/// Generate `tiles` size×size tiles plus the planted band→group truth.
/// Deterministic in `seed`. Each group's spatial field mixes a dataset-wide
/// component, a per-tile component, and a shared global field; output values
/// are min-max scaled to [0,1] per channel over the whole generated set;
/// wavelengths span 420..2450 nm.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    tiles: usize,
    size: usize,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    if tiles == 0 || size == 0 {
        return Err(Error::config("/data/synthetic", "tiles and size must be positive"));
    }
    let k = spec.planted_groups;
    let c = spec.channels;
    let hw = size * size;
    let r = spec.field_smoothness;

    // dataset-level shared field component per group (blurred once)
    let shared: Vec<Vec<f64>> = (0..k)
        .map(|g| {
            let mut rng = Xoshiro256::seeded(derive_path(seed, &[SALT_SHARED, g as u64]));
            blur_field(&white_noise_field(&mut rng, hw, spec.field_exponents[g]), size, size, r)
        })
        .collect();

    let global_shared = {
        let mut rng = Xoshiro256::seeded(derive_path(seed, &[SALT_SHARED, k as u64]));
        blur_field(&white_noise_field(&mut rng, hw, 1.0), size, size, r)
    };

    let mut raw_tiles: Vec<Vec<f64>> = Vec::with_capacity(tiles);
    for t in 0..tiles {
        let global: Vec<f64> = {
            let mut rng = Xoshiro256::seeded(derive_path(seed, &[SALT_TILE, t as u64, k as u64]));
            let indiv = blur_field(&white_noise_field(&mut rng, hw, 1.0), size, size, r);
            indiv.iter().zip(&global_shared).map(|(&a, &b)| 0.5 * a + 0.5 * b).collect()
        };
        let fields: Vec<Vec<f64>> = (0..k)
            .map(|g| {
                let mut rng =
                    Xoshiro256::seeded(derive_path(seed, &[SALT_TILE, t as u64, g as u64]));
                let indiv = blur_field(
                    &white_noise_field(&mut rng, hw, spec.field_exponents[g]),
                    size,
                    size,
                    r,
                );
                // 50/50 shared/per-tile mix; equals the blur of the mixed
                // white noise since the blur is linear
                indiv
                    .iter()
                    .zip(&shared[g])
                    .zip(&global)
                    .map(|((&a, &b), &gl)| {
                        (1.0 - GLOBAL_MIX) * (0.5 * a + 0.5 * b) + GLOBAL_MIX * gl
                    })
                    .collect()
            })
            .collect();
        let mut data = tile_from_fields(&spec.profiles, &fields, hw);
        if spec.noise_sigma > 0.0 {
            let mut nrng = Xoshiro256::seeded(derive_path(seed, &[SALT_NOISE, t as u64]));
            for b in 0..c {
                // noise scales with the band's own-group amplitude so the
                // signal-to-noise ratio is uniform across bands
                let scale = spec.noise_sigma * spec.profiles[spec.truth[b]][b];
                for v in &mut data[b * hw..(b + 1) * hw] {
                    *v += scale * nrng.next_gauss();
                }
            }
        }
        raw_tiles.push(data);
    }

    // per-channel min-max over the full generated set
    let mut lo = vec![f64::INFINITY; c];
    let mut hi = vec![f64::NEG_INFINITY; c];
    for data in &raw_tiles {
        for b in 0..c {
            for &v in &data[b * hw..(b + 1) * hw] {
                lo[b] = lo[b].min(v);
                hi[b] = hi[b].max(v);
            }
        }
    }
    let wavelengths: Vec<f32> = (0..c)
        .map(|b| {
            let u = if c > 1 { b as f64 / (c - 1) as f64 } else { 0.0 };
            (420.0 + (2450.0 - 420.0) * u) as f32
        })
        .collect();
    let mut cubes = Vec::with_capacity(tiles);
    for data in &raw_tiles {
        let mut scaled = vec![0.0f32; c * hw];
        for b in 0..c {
            let range = hi[b] - lo[b];
            for (o, &v) in
                scaled[b * hw..(b + 1) * hw].iter_mut().zip(&data[b * hw..(b + 1) * hw])
            {
                *o = if range > 0.0 { ((v - lo[b]) / range) as f32 } else { 0.5 };
            }
        }
        cubes.push(HyperCube::new(size, size, c, scaled, Some(wavelengths.clone()))?);
    }
    let ds = Dataset::new(cubes, Split::Train)?;
    Ok((ds, spec.truth.clone()))
}

/// Deterministic order-based split: first `train` fraction, then `val`,
/// remainder test.
pub fn split_dataset(ds: &Dataset, train_frac: f64, val_frac: f64) -> Result<(Dataset, Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac > 1.0
    {
        return Err(Error::config("/data/synthetic/split", "fractions must be in [0,1] and sum <= 1"));
    }
    let n = ds.tiles.len();
    let n_train = (train_frac * n as f64).round() as usize;
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
    let train = Dataset::new(ds.tiles[..n_train].to_vec(), Split::Train)?;
    let val = Dataset::new(ds.tiles[n_train..n_train + n_val].to_vec(), Split::Val)?;
    let test = Dataset::new(ds.tiles[n_train + n_val..].to_vec(), Split::Test)?;
    Ok((train, val, test))
}
