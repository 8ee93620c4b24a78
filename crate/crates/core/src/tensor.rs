//! Minimal dense-tensor reverse-mode autodiff. Values are f64, tapes are
//! append-only op lists addressed by node index, and backward accepts
//! multiple seed gradients so per-group output heads can each inject their
//! own upstream gradient in one pass.

use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("tensor: shape {shape:?} vs {} values", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2-D tensor (a 1-D tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on {:?}", self.shape),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on {:?}", self.shape),
        }
    }
}

// ---- raw matrix kernels -------------------------------------------------

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// A·Bᵀ with A m×k, B n×k.
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// Aᵀ·B with A m×p, B m×q, result p×q.
fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, p: usize, q: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    for r in 0..m {
        let arow = &a[r * p..(r + 1) * p];
        let brow = &b[r * q..(r + 1) * q];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * q..(i + 1) * q];
            for j in 0..q {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

// ---- tape ------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBiasRow { a: NodeId, b: NodeId },
    Scale { a: NodeId, k: f64 },
    GatherRows { a: NodeId, rows: Vec<usize> },
    ScatterRows { a: NodeId, rows: Vec<usize> },
    RepeatRow { a: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Gelu { a: NodeId },
    SoftmaxRows { a: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn two_d(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[id].value.shape;
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what}: expected 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.two_d(a, "matmul lhs")?;
        let (k2, n) = self.two_d(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: {m}x{k} · {k2}x{n}")));
        }
        let data = matmul_raw(&self.nodes[a].value.data, &self.nodes[b].value.data, m, k, n);
        Ok(self.push(Op::MatMul { a, b }, Tensor { shape: vec![m, n], data }))
    }

    /// A·Bᵀ (B stored row-major n×k).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.two_d(a, "matmul_nt lhs")?;
        let (n, k2) = self.two_d(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul_nt: {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let data = matmul_nt_raw(&self.nodes[a].value.data, &self.nodes[b].value.data, m, k, n);
        Ok(self.push(Op::MatMulNT { a, b }, Tensor { shape: vec![m, n], data }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape != self.nodes[b].value.shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.nodes[a].value.shape, self.nodes[b].value.shape
            )));
        }
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape.clone();
        Ok(self.push(Op::Add { a, b }, Tensor { shape, data }))
    }

    /// Matrix plus per-column bias broadcast over rows.
    pub fn add_bias_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.two_d(a, "add_bias_row lhs")?;
        let bt = &self.nodes[b].value;
        if bt.numel() != n {
            return Err(Error::Shape(format!("add_bias_row: {m}x{n} + bias {}", bt.numel())));
        }
        let mut data = self.nodes[a].value.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.nodes[b].value.data[j];
            }
        }
        Ok(self.push(Op::AddBiasRow { a, b }, Tensor { shape: vec![m, n], data }))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let mut t = self.nodes[a].value.clone();
        for v in &mut t.data {
            *v *= k;
        }
        self.push(Op::Scale { a, k }, t)
    }

    /// out[i] = a[rows[i]] for a 2-D source; indices may repeat.
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let (m, n) = self.two_d(a, "gather_rows src")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Shape(format!("gather_rows: row {bad} out of {m}")));
        }
        let src = &self.nodes[a].value.data;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let out_rows = rows.len();
        Ok(self.push(Op::GatherRows { a, rows }, Tensor { shape: vec![out_rows, n], data }))
    }

    /// Place row i of `a` at row rows[i] of an out_rows×n zero matrix.
    /// Indices must be unique and in range.
    pub fn scatter_rows(&mut self, a: NodeId, rows: Vec<usize>, out_rows: usize) -> Result<NodeId> {
        let (m, n) = self.two_d(a, "scatter_rows src")?;
        if rows.len() != m {
            return Err(Error::Shape(format!("scatter_rows: {} indices for {m} rows", rows.len())));
        }
        let mut seen = vec![false; out_rows];
        for &r in &rows {
            if r >= out_rows {
                return Err(Error::Shape(format!("scatter_rows: row {r} out of {out_rows}")));
            }
            if seen[r] {
                return Err(Error::Shape(format!("scatter_rows: duplicate row {r}")));
            }
            seen[r] = true;
        }
        let src = &self.nodes[a].value.data;
        let mut data = vec![0.0; out_rows * n];
        for (i, &r) in rows.iter().enumerate() {
            data[r * n..(r + 1) * n].copy_from_slice(&src[i * n..(i + 1) * n]);
        }
        Ok(self.push(Op::ScatterRows { a, rows }, Tensor { shape: vec![out_rows, n], data }))
    }

    /// Tile a single row (1-D or 1×n) into an m×n matrix.
    pub fn repeat_row(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        let t = &self.nodes[a].value;
        if t.rows() != 1 {
            return Err(Error::Shape(format!("repeat_row: source shape {:?}", t.shape)));
        }
        let n = t.cols();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&t.data);
        }
        Ok(self.push(Op::RepeatRow { a }, Tensor { shape: vec![m, n], data }))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: no parts".into()));
        }
        let (m, _) = self.two_d(parts[0], "concat_cols part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in &parts {
            let (mp, np) = self.two_d(p, "concat_cols part")?;
            if mp != m {
                return Err(Error::Shape(format!("concat_cols: {mp} rows vs {m}")));
            }
            widths.push(np);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &np) in parts.iter().zip(&widths) {
            let src = &self.nodes[p].value.data;
            for i in 0..m {
                data[i * n + off..i * n + off + np].copy_from_slice(&src[i * np..(i + 1) * np]);
            }
            off += np;
        }
        Ok(self.push(Op::ConcatCols { parts }, Tensor { shape: vec![m, n], data }))
    }

    /// Columns [start, end) of a 2-D tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = self.two_d(a, "slice_cols src")?;
        if start >= end || end > n {
            return Err(Error::Shape(format!("slice_cols: [{start},{end}) of {n}")));
        }
        let w = end - start;
        let src = &self.nodes[a].value.data;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        Ok(self.push(Op::SliceCols { a, start }, Tensor { shape: vec![m, w], data }))
    }

    /// Per-row layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.two_d(a, "layer_norm src")?;
        if self.nodes[gamma].value.numel() != n || self.nodes[beta].value.numel() != n {
            return Err(Error::Shape(format!(
                "layer_norm: width {n} vs gamma {} beta {}",
                self.nodes[gamma].value.numel(),
                self.nodes[beta].value.numel()
            )));
        }
        let src = &self.nodes[a].value.data;
        let g = &self.nodes[gamma].value.data;
        let b = &self.nodes[beta].value.data;
        let mut data = vec![0.0; m * n];
        let inv_n = 1.0 / n as f64;
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() * inv_n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() * inv_n;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                data[i * n + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        Ok(self.push(Op::LayerNorm { a, gamma, beta, eps }, Tensor { shape: vec![m, n], data }))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut t = self.nodes[a].value.clone();
        for v in &mut t.data {
            *v = gelu_val(*v);
        }
        self.push(Op::Gelu { a }, t)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.two_d(a, "softmax src")?;
        let src = &self.nodes[a].value.data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                data[i * n + j] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for j in 0..n {
                data[i * n + j] *= inv;
            }
        }
        Ok(self.push(Op::SoftmaxRows { a }, Tensor { shape: vec![m, n], data }))
    }

    /// Reverse sweep from the given seed gradients. Returns one gradient slot
    /// per node (None where nothing flowed). Seeds must match node shapes.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Result<Vec<Option<Tensor>>> {
        if self.nodes.is_empty() {
            return Err(Error::Trace);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            if id >= self.nodes.len() {
                return Err(Error::Shape(format!("backward: seed node {id} out of tape")));
            }
            if seed.shape != self.nodes[id].value.shape {
                return Err(Error::Shape(format!(
                    "backward: seed {:?} vs node {:?}",
                    seed.shape, self.nodes[id].value.shape
                )));
            }
            accumulate(&mut grads[id], &seed.data, &seed.shape);
        }
        if grads.iter().all(|g| g.is_none()) {
            return Err(Error::Trace);
        }

        for id in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[id].clone() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[*a].value.shape[0], self.nodes[*a].value.shape[1]);
                    let n = self.nodes[*b].value.shape[1];
                    let da = matmul_nt_raw(&dy.data, &self.nodes[*b].value.data, m, n, k);
                    let db = matmul_tn_raw(&self.nodes[*a].value.data, &dy.data, m, k, n);
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                    accumulate(&mut grads[*b], &db, &self.nodes[*b].value.shape);
                }
                Op::MatMulNT { a, b } => {
                    let (m, k) = (self.nodes[*a].value.shape[0], self.nodes[*a].value.shape[1]);
                    let n = self.nodes[*b].value.shape[0];
                    let da = matmul_raw(&dy.data, &self.nodes[*b].value.data, m, n, k);
                    let db = matmul_tn_raw(&dy.data, &self.nodes[*a].value.data, m, n, k);
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                    accumulate(&mut grads[*b], &db, &self.nodes[*b].value.shape);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[*a], &dy.data, &self.nodes[*a].value.shape);
                    accumulate(&mut grads[*b], &dy.data, &self.nodes[*b].value.shape);
                }
                Op::AddBiasRow { a, b } => {
                    accumulate(&mut grads[*a], &dy.data, &self.nodes[*a].value.shape);
                    let n = self.nodes[*b].value.numel();
                    let m = dy.data.len() / n;
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += dy.data[i * n + j];
                        }
                    }
                    accumulate(&mut grads[*b], &db, &self.nodes[*b].value.shape);
                }
                Op::Scale { a, k } => {
                    let da: Vec<f64> = dy.data.iter().map(|&v| v * k).collect();
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
                Op::GatherRows { a, rows } => {
                    let n = self.nodes[*a].value.shape[1];
                    let mut da = vec![0.0; self.nodes[*a].value.numel()];
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            da[r * n + j] += dy.data[i * n + j];
                        }
                    }
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
                Op::ScatterRows { a, rows } => {
                    let n = self.nodes[*a].value.shape[1];
                    let mut da = vec![0.0; self.nodes[*a].value.numel()];
                    for (i, &r) in rows.iter().enumerate() {
                        da[i * n..(i + 1) * n].copy_from_slice(&dy.data[r * n..(r + 1) * n]);
                    }
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
                Op::RepeatRow { a } => {
                    let n = self.nodes[*a].value.cols();
                    let m = dy.data.len() / n;
                    let mut da = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            da[j] += dy.data[i * n + j];
                        }
                    }
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
                Op::ConcatCols { parts } => {
                    let n = dy.shape[1];
                    let m = dy.shape[0];
                    let mut off = 0;
                    for &p in parts {
                        let np = self.nodes[p].value.shape[1];
                        let mut dp = vec![0.0; m * np];
                        for i in 0..m {
                            dp[i * np..(i + 1) * np]
                                .copy_from_slice(&dy.data[i * n + off..i * n + off + np]);
                        }
                        accumulate(&mut grads[p], &dp, &self.nodes[p].value.shape);
                        off += np;
                    }
                }
                Op::SliceCols { a, start } => {
                    let n = self.nodes[*a].value.shape[1];
                    let w = dy.shape[1];
                    let m = dy.shape[0];
                    let mut da = vec![0.0; self.nodes[*a].value.numel()];
                    for i in 0..m {
                        da[i * n + start..i * n + start + w]
                            .copy_from_slice(&dy.data[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
                Op::LayerNorm { a, gamma, beta, eps } => {
                    let (m, n) = (dy.shape[0], dy.shape[1]);
                    let src = &self.nodes[*a].value.data;
                    let g = &self.nodes[*gamma].value.data;
                    let inv_n = 1.0 / n as f64;
                    let mut da = vec![0.0; m * n];
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    for i in 0..m {
                        let row = &src[i * n..(i + 1) * n];
                        let dyr = &dy.data[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() * inv_n;
                        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() * inv_n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..n {
                            let xh = (row[j] - mean) * inv;
                            let dxh = dyr[j] * g[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                            dgamma[j] += dyr[j] * xh;
                            dbeta[j] += dyr[j];
                        }
                        for j in 0..n {
                            let xh = (row[j] - mean) * inv;
                            let dxh = dyr[j] * g[j];
                            da[i * n + j] =
                                inv * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh);
                        }
                    }
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                    accumulate(&mut grads[*gamma], &dgamma, &self.nodes[*gamma].value.shape);
                    accumulate(&mut grads[*beta], &dbeta, &self.nodes[*beta].value.shape);
                }
                Op::Gelu { a } => {
                    let src = &self.nodes[*a].value.data;
                    let da: Vec<f64> =
                        dy.data.iter().zip(src).map(|(&d, &x)| d * gelu_grad(x)).collect();
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
                Op::SoftmaxRows { a } => {
                    let (m, n) = (dy.shape[0], dy.shape[1]);
                    let y = &self.nodes[id].value.data;
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let dyr = &dy.data[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            da[i * n + j] = yr[j] * (dyr[j] - dot);
                        }
                    }
                    accumulate(&mut grads[*a], &da, &self.nodes[*a].value.shape);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: &[f64], shape: &[usize]) {
    match slot {
        Some(t) => {
            for (dst, &d) in t.data.iter_mut().zip(delta) {
                *dst += d;
            }
        }
        None => {
            *slot = Some(Tensor { shape: shape.to_vec(), data: delta.to_vec() });
        }
    }
}
