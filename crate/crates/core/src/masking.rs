//! Patch grids and grouped, ratio-exact random masking. Per-group masks are
//! sampled from independent PRNG streams so adding groups never perturbs
//! existing groups' masks.

use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::grouping::GroupingResult;
use crate::rng::{derive, Xoshiro256};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub rows: usize,
    pub cols: usize,
    pub num_patches: usize,
}

pub fn make_patch_grid(h: usize, w: usize, p: usize) -> Result<PatchGrid> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Grid { patch: p, h, w });
    }
    let rows = h / p;
    let cols = w / p;
    Ok(PatchGrid { patch: p, rows, cols, num_patches: rows * cols })
}

impl PatchGrid {
    /// Top-left pixel (y, x) of patch index `i` (row-major patches).
    #[inline]
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i / self.cols) * self.patch, (i % self.cols) * self.patch)
    }

    #[inline]
    pub fn patch_of(&self, y: usize, x: usize) -> usize {
        (y / self.patch) * self.cols + (x / self.patch)
    }
}

/// Number of masked patches: round(ratio·n), half away from zero.
pub fn mask_count(ratio: f64, num_patches: usize) -> usize {
    ((ratio * num_patches as f64).round() as usize).min(num_patches)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMask {
    /// Masked patch indices, ascending.
    pub masked: Vec<usize>,
    /// Complement, ascending.
    pub visible: Vec<usize>,
}

/// Per-group masked/visible patch sets at a fixed ratio, deterministic in
/// `seed`. Group g draws from the stream seeded with derive(seed, g).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub seed: u64,
    pub ratio: f64,
    pub groups: Vec<GroupMask>,
}

pub fn sample_mask(grid: &PatchGrid, groups: usize, ratio: f64, seed: u64) -> MaskPlan {
    debug_assert!((0.0..=1.0).contains(&ratio));
    let n = grid.num_patches;
    let k = mask_count(ratio, n);
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut rng = Xoshiro256::seeded(derive(seed, g as u64));
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut masked: Vec<usize> = perm[..k].to_vec();
        masked.sort_unstable();
        let mut is_masked = vec![false; n];
        for &p in &masked {
            is_masked[p] = true;
        }
        let visible: Vec<usize> = (0..n).filter(|&p| !is_masked[p]).collect();
        out.push(GroupMask { masked, visible });
    }
    MaskPlan { seed, ratio, groups: out }
}

#[derive(Serialize, Deserialize)]
struct MaskPlanJson {
    seed: u64,
    ratio: f64,
    per_group_masked: Vec<Vec<usize>>,
}

impl MaskPlan {
    /// Audit serialization: {seed, ratio, per_group_masked}.
    pub fn to_json(&self) -> String {
        let doc = MaskPlanJson {
            seed: self.seed,
            ratio: self.ratio,
            per_group_masked: self.groups.iter().map(|g| g.masked.clone()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("mask plan serializes")
    }

    pub fn from_json(s: &str, num_patches: usize) -> Result<MaskPlan> {
        let doc: MaskPlanJson =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("mask plan decode: {e}")))?;
        let groups = doc
            .per_group_masked
            .into_iter()
            .map(|mut masked| {
                masked.sort_unstable();
                let mut is_masked = vec![false; num_patches];
                for &p in &masked {
                    if p >= num_patches {
                        return Err(Error::Format(format!("patch index {p} out of range")));
                    }
                    is_masked[p] = true;
                }
                let visible = (0..num_patches).filter(|&p| !is_masked[p]).collect();
                Ok(GroupMask { masked, visible })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskPlan { seed: doc.seed, ratio: doc.ratio, groups })
    }
}

/// Pixel blocks for a set of (group, patch) pairs. Within a block, values
/// are channel-major then row-major: index = (ci·P + py)·P + px, with ci the
/// position of the channel inside the group's ascending channel list.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlocks {
    pub group: usize,
    /// Ascending band indices belonging to this group.
    pub channels: Vec<usize>,
    /// Patch indices, in mask-plan order (ascending).
    pub patches: Vec<usize>,
    /// patches.len() rows of block_len values each.
    pub values: Vec<f32>,
}

impl GroupBlocks {
    pub fn block_len(&self, patch: usize) -> usize {
        self.channels.len() * patch * patch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet {
    pub per_group: Vec<GroupBlocks>,
}

fn extract_blocks(
    cube: &HyperCube,
    grid: &PatchGrid,
    channels: &[usize],
    patches: &[usize],
    group: usize,
) -> GroupBlocks {
    let p = grid.patch;
    let mut values = Vec::with_capacity(patches.len() * channels.len() * p * p);
    for &patch in patches {
        let (y0, x0) = grid.origin(patch);
        for &c in channels {
            for py in 0..p {
                let base = cube.index(c, y0 + py, x0);
                values.extend_from_slice(&cube.data[base..base + p]);
            }
        }
    }
    GroupBlocks { group, channels: channels.to_vec(), patches: patches.to_vec(), values }
}

/// Split the cube into per-(group, patch) pixel blocks: visible blocks feed
/// the encoder, masked blocks are the reconstruction targets. Extraction is
/// exact; `reassemble` inverts it bit-for-bit.
pub fn apply_mask(
    cube: &HyperCube,
    grouping: &GroupingResult,
    plan: &MaskPlan,
    grid: &PatchGrid,
) -> Result<(BlockSet, BlockSet)> {
    if plan.groups.len() != grouping.num_groups {
        return Err(Error::Shape(format!(
            "plan has {} groups, grouping has {}",
            plan.groups.len(),
            grouping.num_groups
        )));
    }
    if grouping.channels() != cube.channels
        || grid.rows * grid.patch != cube.height
        || grid.cols * grid.patch != cube.width
    {
        return Err(Error::Shape("cube, grouping, and grid are inconsistent".into()));
    }
    let mut visible = Vec::with_capacity(grouping.num_groups);
    let mut masked = Vec::with_capacity(grouping.num_groups);
    for g in 0..grouping.num_groups {
        let channels = grouping.members(g);
        visible.push(extract_blocks(cube, grid, &channels, &plan.groups[g].visible, g));
        masked.push(extract_blocks(cube, grid, &channels, &plan.groups[g].masked, g));
    }
    Ok((BlockSet { per_group: visible }, BlockSet { per_group: masked }))
}

/// Write a set of blocks back into a cube buffer (inverse of extraction).
pub fn scatter_blocks(target: &mut HyperCube, blocks: &BlockSet, grid: &PatchGrid) {
    let p = grid.patch;
    for gb in &blocks.per_group {
        let block_len = gb.block_len(p);
        for (row, &patch) in gb.patches.iter().enumerate() {
            let block = &gb.values[row * block_len..(row + 1) * block_len];
            let (y0, x0) = grid.origin(patch);
            for (ci, &c) in gb.channels.iter().enumerate() {
                for py in 0..p {
                    let src = (ci * p + py) * p;
                    let dst = target.index(c, y0 + py, x0);
                    target.data[dst..dst + p].copy_from_slice(&block[src..src + p]);
                }
            }
        }
    }
}
