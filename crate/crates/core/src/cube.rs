//! Hyperspectral tile data model, the HSC on-disk format, channel
//! sanitization, scene tiling, and dataset normalization.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// H×W×C reflectance tile. Layout is band-sequential: C planes of H×W,
/// each plane row-major, so index(c,y,x) = c·H·W + y·W + x.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub wavelengths: Option<Vec<f32>>,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        wavelengths: Option<Vec<f32>>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!("degenerate cube {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(wl) = &wavelengths {
            if wl.len() != channels {
                return Err(Error::Shape(format!(
                    "wavelength count {} != channels {channels}",
                    wl.len()
                )));
            }
            for i in 0..wl.len() {
                if wl[i] <= 0.0 || (i > 0 && wl[i] <= wl[i - 1]) {
                    return Err(Error::Shape(format!(
                        "wavelengths must be strictly increasing and positive (index {i})"
                    )));
                }
            }
        }
        Ok(HyperCube { height, width, channels, data, wavelengths })
    }

    #[inline(always)]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline(always)]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    /// One band plane as an H·W row-major slice.
    pub fn band(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn band_mut(&mut self, c: usize) -> &mut [f32] {
        let hw = self.height * self.width;
        &mut self.data[c * hw..(c + 1) * hw]
    }
}

const HSC_MAGIC: &[u8; 4] = b"HSC1";
const DTYPE_F32: u32 = 0;

/// Read an HSC tile file. Little-endian throughout: "HSC1", u32 H, u32 W,
/// u32 C, u32 dtype code (0 = f32), u32 wavelength flag, optional C×f32
/// wavelengths, then H·W·C f32 values band-sequential row-major.
pub fn read_hsc(path: &Path) -> Result<HyperCube> {
    let bytes = fs::read(path)?;
    read_hsc_bytes(&bytes)
}

pub fn read_hsc_bytes(bytes: &[u8]) -> Result<HyperCube> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format("truncated HSC payload".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    let magic = take(4)?;
    if magic != HSC_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"HSC1\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let read_u32 = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let h = read_u32(take(4)?) as usize;
    let w = read_u32(take(4)?) as usize;
    let c = read_u32(take(4)?) as usize;
    let dtype = read_u32(take(4)?);
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let flag = read_u32(take(4)?);
    if flag > 1 {
        return Err(Error::Format(format!("bad wavelength flag {flag}")));
    }
    let wavelengths = if flag == 1 {
        let raw = take(4 * c)?;
        Some(raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    } else {
        None
    };
    let n = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(c))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let raw = take(4 * n)?;
    if !cur.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cur.len())));
    }
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    HyperCube::new(h, w, c, data, wavelengths)
}

/// Write a cube in HSC format; `read_hsc` inverts this bit-for-bit.
pub fn write_hsc(cube: &HyperCube, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&hsc_bytes(cube))?;
    Ok(())
}

pub fn hsc_bytes(cube: &HyperCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * cube.data.len());
    out.extend_from_slice(HSC_MAGIC);
    out.extend_from_slice(&(cube.height as u32).to_le_bytes());
    out.extend_from_slice(&(cube.width as u32).to_le_bytes());
    out.extend_from_slice(&(cube.channels as u32).to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(cube.wavelengths.is_some() as u32).to_le_bytes());
    if let Some(wl) = &cube.wavelengths {
        for v in wl {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &cube.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Remove every channel whose values are all exactly `sentinel`
/// (the EnMAP no-data convention). Wavelengths are filtered consistently.
pub fn drop_sentinel_channels(cube: &HyperCube, sentinel: f32) -> Result<HyperCube> {
    let keep: Vec<usize> = (0..cube.channels)
        .filter(|&c| cube.band(c).iter().any(|&v| v != sentinel))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyCube);
    }
    let hw = cube.height * cube.width;
    let mut data = Vec::with_capacity(keep.len() * hw);
    for &c in &keep {
        data.extend_from_slice(cube.band(c));
    }
    let wavelengths =
        cube.wavelengths.as_ref().map(|wl| keep.iter().map(|&c| wl[c]).collect::<Vec<_>>());
    HyperCube::new(cube.height, cube.width, keep.len(), data, wavelengths)
}

/// Cut a scene into non-overlapping tile×tile cubes in row-major scan
/// order; trailing remainder rows/columns are discarded.
pub fn tile_scene(scene: &HyperCube, tile: usize) -> Result<Vec<HyperCube>> {
    if tile == 0 || tile > scene.height.min(scene.width) {
        return Err(Error::NoTiles { tile, h: scene.height, w: scene.width });
    }
    let rows = scene.height / tile;
    let cols = scene.width / tile;
    let mut out = Vec::with_capacity(rows * cols);
    for ty in 0..rows {
        for tx in 0..cols {
            let mut data = Vec::with_capacity(tile * tile * scene.channels);
            for c in 0..scene.channels {
                for y in 0..tile {
                    let base = scene.index(c, ty * tile + y, tx * tile);
                    data.extend_from_slice(&scene.data[base..base + tile]);
                }
            }
            out.push(HyperCube::new(
                tile,
                tile,
                scene.channels,
                data,
                scene.wavelengths.clone(),
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ordered tile collection for one split, with the per-channel (min, max)
/// normalization pairs that produced it (present once normalized).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tiles: Vec<HyperCube>,
    pub split: Split,
    pub normalization: Option<Vec<(f32, f32)>>,
}

impl Dataset {
    pub fn new(tiles: Vec<HyperCube>, split: Split) -> Result<Self> {
        if let Some(first) = tiles.first() {
            for (i, t) in tiles.iter().enumerate() {
                if (t.height, t.width, t.channels) != (first.height, first.width, first.channels)
                    || t.wavelengths != first.wavelengths
                {
                    return Err(Error::Shape(format!("tile {i} differs in shape or wavelengths")));
                }
            }
        }
        Ok(Dataset { tiles, split, normalization: None })
    }

    pub fn channels(&self) -> usize {
        self.tiles.first().map_or(0, |t| t.channels)
    }

    pub fn tile_shape(&self) -> (usize, usize, usize) {
        self.tiles.first().map_or((0, 0, 0), |t| (t.height, t.width, t.channels))
    }
}

/// Per-channel dataset-wide (min, max); errors on a constant channel.
pub fn channel_min_max(ds: &Dataset) -> Result<Vec<(f32, f32)>> {
    let c = ds.channels();
    let mut pairs = vec![(f32::INFINITY, f32::NEG_INFINITY); c];
    for t in &ds.tiles {
        for ch in 0..c {
            for &v in t.band(ch) {
                let p = &mut pairs[ch];
                p.0 = p.0.min(v);
                p.1 = p.1.max(v);
            }
        }
    }
    for (ch, &(lo, hi)) in pairs.iter().enumerate() {
        if !(hi > lo) {
            return Err(Error::DegenerateChannel(ch));
        }
    }
    Ok(pairs)
}

/// Min-max scale every channel to [0,1] with statistics computed over `ds`
/// itself (call on the train split, then reuse the recorded pairs for
/// val/test via `apply_normalization`).
pub fn normalize_dataset(ds: &Dataset) -> Result<Dataset> {
    let pairs = channel_min_max(ds)?;
    apply_normalization(ds, &pairs)
}

/// Scale with externally supplied per-channel (min, max) pairs; results are
/// clamped to [0,1] so val/test values outside the train range stay legal.
pub fn apply_normalization(ds: &Dataset, pairs: &[(f32, f32)]) -> Result<Dataset> {
    let c = ds.channels();
    if pairs.len() != c {
        return Err(Error::Shape(format!("{} normalization pairs for {c} channels", pairs.len())));
    }
    for (ch, &(lo, hi)) in pairs.iter().enumerate() {
        if !(hi > lo) {
            return Err(Error::DegenerateChannel(ch));
        }
    }
    let mut tiles = Vec::with_capacity(ds.tiles.len());
    for t in &ds.tiles {
        let mut out = t.clone();
        for ch in 0..c {
            let (lo, hi) = (pairs[ch].0 as f64, pairs[ch].1 as f64);
            let inv = 1.0 / (hi - lo);
            for v in out.band_mut(ch) {
                *v = (((*v as f64 - lo) * inv).clamp(0.0, 1.0)) as f32;
            }
        }
        tiles.push(out);
    }
    let mut out = Dataset::new(tiles, ds.split)?;
    out.normalization = Some(pairs.to_vec());
    Ok(out)
}

/// On-disk dataset description: tile paths per split (relative to the
/// manifest), the shared tile shape, wavelengths, and the train-split
/// normalization pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tile_shape: [usize; 3],
    pub wavelengths: Option<Vec<f32>>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Per-channel [min, max] measured over the train split (raw values).
    pub normalization: Vec<[f32; 2]>,
}

impl Manifest {
    pub fn paths(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = String::new();
        fs::File::open(path)?.read_to_string(&mut s)?;
        serde_json::from_str(&s).map_err(|e| Error::Format(format!("manifest decode: {e}")))
    }

    /// Load one split's tiles (raw values as stored, no normalization).
    pub fn load_split_raw(&self, manifest_path: &Path, split: Split) -> Result<Dataset> {
        let dir = manifest_path.parent().map(PathBuf::from).unwrap_or_default();
        let mut tiles = Vec::new();
        for rel in self.paths(split) {
            tiles.push(read_hsc(&dir.join(rel))?);
        }
        Dataset::new(tiles, split)
    }

    /// Load one split and apply the recorded train-split normalization.
    pub fn load_split(&self, manifest_path: &Path, split: Split) -> Result<Dataset> {
        let raw = self.load_split_raw(manifest_path, split)?;
        if raw.tiles.is_empty() {
            return Ok(raw);
        }
        let pairs: Vec<(f32, f32)> = self.normalization.iter().map(|p| (p[0], p[1])).collect();
        apply_normalization(&raw, &pairs)
    }
}
