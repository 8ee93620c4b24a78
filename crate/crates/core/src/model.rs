//! Desk-scale grouped masked autoencoder: per-group linear tokenization of
//! P×P×|C_g| blocks, fixed 2D sin-cos spatial positions plus learned group
//! embeddings, a pre-norm transformer encoder over visible tokens only, a
//! narrow decoder with a shared mask token, and per-group pixel heads.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::grouping::GroupingResult;
use crate::masking::{make_patch_grid, MaskPlan, PatchGrid};
use crate::rng::Xoshiro256;
use crate::tensor::{NodeId, Tape, Tensor};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
/// MLP hidden width multiplier.
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub groups: usize,
    pub mask_ratio: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch: 4,
            dim: 64,
            depth: 2,
            heads: 4,
            dec_dim: 32,
            dec_depth: 1,
            groups: 5,
            mask_ratio: 0.75,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::config("/model/patch", "patch must be positive"));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config("/model/dim", "dim must be a positive multiple of heads"));
        }
        if self.dim % 4 != 0 {
            return Err(Error::config("/model/dim", "dim must be divisible by 4 for sin-cos positions"));
        }
        if self.dec_dim == 0 || self.dec_dim % self.heads != 0 || self.dec_dim % 4 != 0 {
            return Err(Error::config(
                "/model/dec_dim",
                "decoder dim must be a positive multiple of heads and of 4",
            ));
        }
        if self.groups == 0 {
            return Err(Error::config("/model/groups", "groups must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) || !self.mask_ratio.is_finite() {
            return Err(Error::config("/model/mask_ratio", "mask ratio must lie in [0,1]"));
        }
        Ok(())
    }
}

// ---- parameter registry ------------------------------------------------------

/// Named parameter tensors in fixed insertion order. Insertion order is the
/// checkpoint and optimizer-state order, so it must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Shape(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::Shape(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Shape(format!("unknown parameter {name}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Clamp every value to its nearest f32; keeps in-memory state identical
    /// to what a checkpoint round-trip would produce.
    pub fn quantize_f32(&mut self) {
        for (_, t) in &mut self.entries {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }
}

struct Init {
    rng: Xoshiro256,
}

impl Init {
    fn normal(&mut self, shape: Vec<usize>, sigma: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.next_gauss() * sigma).collect();
        Tensor { shape, data }
    }
}

fn block_param_shapes(prefix: &str, dim: usize, params: &mut Params, init: &mut Init) -> Result<()> {
    let hidden = MLP_RATIO * dim;
    params.insert(&format!("{prefix}.ln1.g"), Tensor { shape: vec![dim], data: vec![1.0; dim] })?;
    params.insert(&format!("{prefix}.ln1.b"), Tensor::zeros(vec![dim]))?;
    for w in ["wq", "wk", "wv", "wo"] {
        params.insert(&format!("{prefix}.attn.{w}"), init.normal(vec![dim, dim], 0.02))?;
    }
    for b in ["bq", "bk", "bv", "bo"] {
        params.insert(&format!("{prefix}.attn.{b}"), Tensor::zeros(vec![dim]))?;
    }
    params.insert(&format!("{prefix}.ln2.g"), Tensor { shape: vec![dim], data: vec![1.0; dim] })?;
    params.insert(&format!("{prefix}.ln2.b"), Tensor::zeros(vec![dim]))?;
    params.insert(&format!("{prefix}.mlp.w1"), init.normal(vec![dim, hidden], 0.02))?;
    params.insert(&format!("{prefix}.mlp.b1"), Tensor::zeros(vec![hidden]))?;
    params.insert(&format!("{prefix}.mlp.w2"), init.normal(vec![hidden, dim], 0.02))?;
    params.insert(&format!("{prefix}.mlp.b2"), Tensor::zeros(vec![dim]))?;
    Ok(())
}

/// Fresh parameters drawn from a single seeded stream in registry order.
/// Weights are N(0, 0.02²), biases and shifts zero, norm gains one; values
/// are quantized to f32 so training state matches checkpoint precision.
pub fn init_params(config: &ModelConfig, grouping: &GroupingResult, seed: u64) -> Result<Params> {
    config.validate()?;
    if grouping.num_groups != config.groups {
        return Err(Error::config("/model/groups", "groups must equal grouping.num_groups"));
    }
    let mut init = Init { rng: Xoshiro256::seeded(seed) };
    let mut params = Params::new();
    let p2 = config.patch * config.patch;

    for g in 0..config.groups {
        let in_g = p2 * grouping.group_sizes[g];
        params.insert(&format!("enc.embed.g{g}.w"), init.normal(vec![in_g, config.dim], 0.02))?;
        params.insert(&format!("enc.embed.g{g}.b"), Tensor::zeros(vec![config.dim]))?;
    }
    params.insert("enc.group_embed", init.normal(vec![config.groups, config.dim], 0.02))?;
    for b in 0..config.depth {
        block_param_shapes(&format!("enc.b{b}"), config.dim, &mut params, &mut init)?;
    }
    params.insert("enc.norm.g", Tensor { shape: vec![config.dim], data: vec![1.0; config.dim] })?;
    params.insert("enc.norm.b", Tensor::zeros(vec![config.dim]))?;

    params.insert("dec.proj.w", init.normal(vec![config.dim, config.dec_dim], 0.02))?;
    params.insert("dec.proj.b", Tensor::zeros(vec![config.dec_dim]))?;
    params.insert("dec.mask_token", init.normal(vec![1, config.dec_dim], 0.02))?;
    params.insert("dec.group_embed", init.normal(vec![config.groups, config.dec_dim], 0.02))?;
    for b in 0..config.dec_depth {
        block_param_shapes(&format!("dec.b{b}"), config.dec_dim, &mut params, &mut init)?;
    }
    params.insert("dec.norm.g", Tensor { shape: vec![config.dec_dim], data: vec![1.0; config.dec_dim] })?;
    params.insert("dec.norm.b", Tensor::zeros(vec![config.dec_dim]))?;
    for g in 0..config.groups {
        let out_g = p2 * grouping.group_sizes[g];
        params.insert(&format!("dec.head.g{g}.w"), init.normal(vec![config.dec_dim, out_g], 0.02))?;
        params.insert(&format!("dec.head.g{g}.b"), Tensor::zeros(vec![out_g]))?;
    }
    params.quantize_f32();
    Ok(params)
}

// ---- positions ----------------------------------------------------------------

/// Fixed 2D sin-cos embedding over a rows×cols patch grid. Half the width
/// encodes the row coordinate, half the column; each half is dim/4 sines
/// followed by dim/4 cosines at frequencies 1/10000^(k/(dim/4)).
pub fn sincos_2d(rows: usize, cols: usize, dim: usize) -> Result<Tensor> {
    if dim % 4 != 0 || dim == 0 {
        return Err(Error::Shape(format!("sincos_2d: dim {dim} not divisible by 4")));
    }
    let quarter = dim / 4;
    let omegas: Vec<f64> =
        (0..quarter).map(|k| 1.0 / 10000f64.powf(k as f64 / quarter as f64)).collect();
    let mut data = vec![0.0; rows * cols * dim];
    for r in 0..rows {
        for c in 0..cols {
            let row = &mut data[(r * cols + c) * dim..(r * cols + c + 1) * dim];
            for (k, &w) in omegas.iter().enumerate() {
                let ay = r as f64 * w;
                let ax = c as f64 * w;
                row[k] = ay.sin();
                row[quarter + k] = ay.cos();
                row[2 * quarter + k] = ax.sin();
                row[3 * quarter + k] = ax.cos();
            }
        }
    }
    Tensor::matrix(rows * cols, dim, data)
}

// ---- forward ------------------------------------------------------------------

pub struct ForwardOut {
    pub tape: Tape,
    /// Composite reconstruction, band-sequential cube layout: head
    /// predictions at masked blocks, the input copied at visible blocks.
    pub pred: Vec<f64>,
    /// Head predictions at every block, visible ones included.
    pub pred_full: Vec<f64>,
    /// Per-group prediction nodes, shape [num_patches, P²·|C_g|].
    pub head_nodes: Vec<NodeId>,
    /// Leaf node of every parameter, in registry order.
    pub param_nodes: Vec<(String, NodeId)>,
    pub grid: PatchGrid,
}

struct Ctx<'a> {
    tape: Tape,
    nodes: HashMap<String, NodeId>,
    params: &'a Params,
}

impl<'a> Ctx<'a> {
    fn leaf(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.nodes.get(name) {
            return Ok(id);
        }
        let id = self.tape.leaf(self.params.get(name)?.clone());
        self.nodes.insert(name.to_string(), id);
        Ok(id)
    }
}

fn transformer_block(ctx: &mut Ctx, prefix: &str, x: NodeId, dim: usize, heads: usize) -> Result<NodeId> {
    let dh = dim / heads;
    let ln1g = ctx.leaf(&format!("{prefix}.ln1.g"))?;
    let ln1b = ctx.leaf(&format!("{prefix}.ln1.b"))?;
    let h = ctx.tape.layer_norm(x, ln1g, ln1b, LN_EPS)?;

    let wq = ctx.leaf(&format!("{prefix}.attn.wq"))?;
    let bq = ctx.leaf(&format!("{prefix}.attn.bq"))?;
    let wk = ctx.leaf(&format!("{prefix}.attn.wk"))?;
    let bk = ctx.leaf(&format!("{prefix}.attn.bk"))?;
    let wv = ctx.leaf(&format!("{prefix}.attn.wv"))?;
    let bv = ctx.leaf(&format!("{prefix}.attn.bv"))?;
    let wo = ctx.leaf(&format!("{prefix}.attn.wo"))?;
    let bo = ctx.leaf(&format!("{prefix}.attn.bo"))?;

    let q = ctx.tape.matmul(h, wq)?;
    let q = ctx.tape.add_bias_row(q, bq)?;
    let k = ctx.tape.matmul(h, wk)?;
    let k = ctx.tape.add_bias_row(k, bk)?;
    let v = ctx.tape.matmul(h, wv)?;
    let v = ctx.tape.add_bias_row(v, bv)?;

    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let lo = i * dh;
        let hi = lo + dh;
        let qh = ctx.tape.slice_cols(q, lo, hi)?;
        let kh = ctx.tape.slice_cols(k, lo, hi)?;
        let vh = ctx.tape.slice_cols(v, lo, hi)?;
        let scores = ctx.tape.matmul_nt(qh, kh)?;
        let scores = ctx.tape.scale(scores, scale);
        let attn = ctx.tape.softmax_rows(scores)?;
        head_outs.push(ctx.tape.matmul(attn, vh)?);
    }
    let cat = ctx.tape.concat_cols(head_outs)?;
    let proj = ctx.tape.matmul(cat, wo)?;
    let proj = ctx.tape.add_bias_row(proj, bo)?;
    let x = ctx.tape.add(x, proj)?;

    let ln2g = ctx.leaf(&format!("{prefix}.ln2.g"))?;
    let ln2b = ctx.leaf(&format!("{prefix}.ln2.b"))?;
    let h = ctx.tape.layer_norm(x, ln2g, ln2b, LN_EPS)?;
    let w1 = ctx.leaf(&format!("{prefix}.mlp.w1"))?;
    let b1 = ctx.leaf(&format!("{prefix}.mlp.b1"))?;
    let w2 = ctx.leaf(&format!("{prefix}.mlp.w2"))?;
    let b2 = ctx.leaf(&format!("{prefix}.mlp.b2"))?;
    let m = ctx.tape.matmul(h, w1)?;
    let m = ctx.tape.add_bias_row(m, b1)?;
    let m = ctx.tape.gelu(m);
    let m = ctx.tape.matmul(m, w2)?;
    let m = ctx.tape.add_bias_row(m, b2)?;
    ctx.tape.add(x, m)
}

/// One forward pass over a single tile. The encoder runs on visible tokens
/// only (group-major row order); the decoder fills masked rows with the
/// shared mask token, and per-group heads predict every patch block. The
/// returned composite cube copies the input bit-for-bit at visible blocks.
pub fn forward(
    cube: &HyperCube,
    grouping: &GroupingResult,
    plan: &MaskPlan,
    config: &ModelConfig,
    params: &Params,
) -> Result<ForwardOut> {
    config.validate()?;
    if grouping.num_groups != config.groups || plan.groups.len() != config.groups {
        return Err(Error::config("/model/groups", "config, grouping and mask plan disagree on G"));
    }
    if cube.channels != grouping.channels() {
        return Err(Error::Shape(format!(
            "forward: cube has {} channels, grouping {}",
            cube.channels,
            grouping.channels()
        )));
    }
    let grid = make_patch_grid(cube.height, cube.width, config.patch)?;
    let np = grid.num_patches;
    let p = config.patch;
    let p2 = p * p;
    let seq = config.groups * np;

    let mut ctx = Ctx { tape: Tape::new(), nodes: HashMap::new(), params };

    // Per-group token matrices: row = patch, cols = flattened P×P×|C_g| block
    // in (channel-within-group, py, px) order.
    let members: Vec<Vec<usize>> = (0..config.groups).map(|g| grouping.members(g)).collect();
    let mut group_tokens = Vec::with_capacity(config.groups);
    for g in 0..config.groups {
        let chans = &members[g];
        let in_g = p2 * chans.len();
        let mut rows = vec![0.0f64; np * in_g];
        for pt in 0..np {
            let (oy, ox) = grid.origin(pt);
            for (ci, &ch) in chans.iter().enumerate() {
                let band = cube.band(ch);
                for py in 0..p {
                    for px in 0..p {
                        rows[pt * in_g + (ci * p + py) * p + px] =
                            band[(oy + py) * cube.width + ox + px] as f64;
                    }
                }
            }
        }
        let x = ctx.tape.leaf(Tensor::matrix(np, in_g, rows)?);
        let w = ctx.leaf(&format!("enc.embed.g{g}.w"))?;
        let b = ctx.leaf(&format!("enc.embed.g{g}.b"))?;
        let t = ctx.tape.matmul(x, w)?;
        group_tokens.push(ctx.tape.add_bias_row(t, b)?);
    }

    // Visible sequence: group-major, patches ascending within each group.
    let mut vis_global_rows = Vec::new();
    let mut vis_patches = Vec::new();
    let mut vis_groups = Vec::new();
    for g in 0..config.groups {
        for &pt in &plan.groups[g].visible {
            vis_global_rows.push(g * np + pt);
            vis_patches.push(pt);
            vis_groups.push(g);
        }
    }
    let n_vis = vis_global_rows.len();
    if n_vis == 0 {
        return Err(Error::config("/masking/ratio", "mask ratio leaves no visible tokens"));
    }

    let mut vis_tokens: Option<NodeId> = None;
    let mut offset = 0;
    for g in 0..config.groups {
        let vis_g = &plan.groups[g].visible;
        if vis_g.is_empty() {
            continue;
        }
        let gathered = ctx.tape.gather_rows(group_tokens[g], vis_g.clone())?;
        let placed = ctx.tape.scatter_rows(
            gathered,
            (offset..offset + vis_g.len()).collect(),
            n_vis,
        )?;
        offset += vis_g.len();
        vis_tokens = Some(match vis_tokens {
            Some(acc) => ctx.tape.add(acc, placed)?,
            None => placed,
        });
    }
    let mut x = vis_tokens.expect("nonempty visible sequence");

    let enc_pos = ctx.tape.leaf(sincos_2d(grid.rows, grid.cols, config.dim)?);
    let pos_vis = ctx.tape.gather_rows(enc_pos, vis_patches.clone())?;
    x = ctx.tape.add(x, pos_vis)?;
    let enc_grp = ctx.leaf("enc.group_embed")?;
    let grp_vis = ctx.tape.gather_rows(enc_grp, vis_groups.clone())?;
    x = ctx.tape.add(x, grp_vis)?;

    for b in 0..config.depth {
        x = transformer_block(&mut ctx, &format!("enc.b{b}"), x, config.dim, config.heads)?;
    }
    let eng = ctx.leaf("enc.norm.g")?;
    let enb = ctx.leaf("enc.norm.b")?;
    x = ctx.tape.layer_norm(x, eng, enb, LN_EPS)?;

    // Decoder: project, scatter visible rows, fill the rest with mask tokens.
    let pw = ctx.leaf("dec.proj.w")?;
    let pb = ctx.leaf("dec.proj.b")?;
    let d = ctx.tape.matmul(x, pw)?;
    let d = ctx.tape.add_bias_row(d, pb)?;
    let placed_vis = ctx.tape.scatter_rows(d, vis_global_rows.clone(), seq)?;

    let masked_global_rows: Vec<usize> = (0..config.groups)
        .flat_map(|g| plan.groups[g].masked.iter().map(move |&pt| g * np + pt))
        .collect();
    let mut full = placed_vis;
    if !masked_global_rows.is_empty() {
        let mt = ctx.leaf("dec.mask_token")?;
        let mt_rows = ctx.tape.repeat_row(mt, masked_global_rows.len())?;
        let placed_mask = ctx.tape.scatter_rows(mt_rows, masked_global_rows, seq)?;
        full = ctx.tape.add(full, placed_mask)?;
    }

    let all_patches: Vec<usize> = (0..seq).map(|r| r % np).collect();
    let all_groups: Vec<usize> = (0..seq).map(|r| r / np).collect();
    let dec_pos = ctx.tape.leaf(sincos_2d(grid.rows, grid.cols, config.dec_dim)?);
    let pos_all = ctx.tape.gather_rows(dec_pos, all_patches)?;
    full = ctx.tape.add(full, pos_all)?;
    let dec_grp = ctx.leaf("dec.group_embed")?;
    let grp_all = ctx.tape.gather_rows(dec_grp, all_groups)?;
    full = ctx.tape.add(full, grp_all)?;

    for b in 0..config.dec_depth {
        full = transformer_block(&mut ctx, &format!("dec.b{b}"), full, config.dec_dim, config.heads)?;
    }
    let dng = ctx.leaf("dec.norm.g")?;
    let dnb = ctx.leaf("dec.norm.b")?;
    full = ctx.tape.layer_norm(full, dng, dnb, LN_EPS)?;

    // Heads, then composite (truth at visible) and full-prediction cubes.
    let mut head_nodes = Vec::with_capacity(config.groups);
    let mut pred: Vec<f64> = cube.data.iter().map(|&v| v as f64).collect();
    let mut pred_full = pred.clone();
    for g in 0..config.groups {
        let rows_g: Vec<usize> = (g * np..(g + 1) * np).collect();
        let dg = ctx.tape.gather_rows(full, rows_g)?;
        let hw = ctx.leaf(&format!("dec.head.g{g}.w"))?;
        let hb = ctx.leaf(&format!("dec.head.g{g}.b"))?;
        let out = ctx.tape.matmul(dg, hw)?;
        let out = ctx.tape.add_bias_row(out, hb)?;
        head_nodes.push(out);

        let chans = &members[g];
        let out_g = p2 * chans.len();
        let mut masked = vec![false; np];
        for &pt in &plan.groups[g].masked {
            masked[pt] = true;
        }
        let values = &ctx.tape.value(out).data;
        for pt in 0..np {
            let (oy, ox) = grid.origin(pt);
            for (ci, &ch) in chans.iter().enumerate() {
                for py in 0..p {
                    for px in 0..p {
                        let v = values[pt * out_g + (ci * p + py) * p + px];
                        let at = (ch * cube.height + oy + py) * cube.width + ox + px;
                        pred_full[at] = v;
                        if masked[pt] {
                            pred[at] = v;
                        }
                    }
                }
            }
        }
    }

    let mut param_nodes: Vec<(String, NodeId)> = ctx
        .nodes
        .iter()
        .map(|(n, &id)| (n.clone(), id))
        .collect();
    param_nodes.sort_by_key(|(_, id)| *id);

    Ok(ForwardOut { tape: ctx.tape, pred, pred_full, head_nodes, param_nodes, grid })
}

/// Backpropagate a cube-shaped loss gradient (nonzero only at masked
/// elements) to every parameter. Returns gradients keyed by parameter name;
/// parameters outside the trace get zeros.
pub fn backward(
    out: &ForwardOut,
    cube: &HyperCube,
    grouping: &GroupingResult,
    plan: &MaskPlan,
    config: &ModelConfig,
    params: &Params,
    loss_grad: &[f64],
) -> Result<Vec<(String, Tensor)>> {
    if loss_grad.len() != cube.data.len() {
        return Err(Error::Shape(format!(
            "backward: gradient has {} values, cube {}",
            loss_grad.len(),
            cube.data.len()
        )));
    }
    let grid = &out.grid;
    let p = config.patch;
    let p2 = p * p;
    let mut seeds = Vec::with_capacity(config.groups);
    for g in 0..config.groups {
        let chans = grouping.members(g);
        let out_g = p2 * chans.len();
        let mut seed = Tensor::zeros(vec![grid.num_patches, out_g]);
        for &pt in &plan.groups[g].masked {
            let (oy, ox) = grid.origin(pt);
            for (ci, &ch) in chans.iter().enumerate() {
                for py in 0..p {
                    for px in 0..p {
                        seed.data[pt * out_g + (ci * p + py) * p + px] =
                            loss_grad[(ch * cube.height + oy + py) * cube.width + ox + px];
                    }
                }
            }
        }
        seeds.push((out.head_nodes[g], seed));
    }
    let grads = out.tape.backward(seeds)?;
    let mut by_name: HashMap<&str, Tensor> = HashMap::new();
    for (name, id) in &out.param_nodes {
        if let Some(g) = &grads[*id] {
            by_name.insert(name.as_str(), g.clone());
        }
    }
    let mut result = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let g = by_name
            .remove(name)
            .unwrap_or_else(|| Tensor::zeros(t.shape.clone()));
        if g.shape != t.shape {
            return Err(Error::Shape(format!("gradient shape mismatch for {name}")));
        }
        result.push((name.to_string(), g));
    }
    Ok(result)
}
