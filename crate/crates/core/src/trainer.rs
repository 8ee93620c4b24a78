//! Training loop, held-out evaluation, and checkpoint round-tripping.
//!
//! All randomness flows from the run seed through fixed salts, so a (dataset,
//! grouping, config, seed) tuple fully determines the metrics history. Masks
//! are resampled per (epoch, tile) during training and fixed per tile during
//! evaluation.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cube::Dataset;
use crate::grouping::GroupingResult;
use crate::loss::{
    composite_loss, mae, masked_elements, psnr, schedule_weights, ssim, LossReport, LossWeights,
    SidParams, SsimParams,
};
use crate::masking::sample_mask;
use crate::model::{backward, forward, init_params, ModelConfig, Params};
use crate::optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
use crate::rng::{derive_path, Xoshiro256};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SALT_INIT: u64 = 0x10;
pub const SALT_SHUFFLE: u64 = 0x11;
pub const SALT_MASK: u64 = 0x12;
pub const SALT_EVAL: u64 = 0x13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Loss-schedule warmup epochs; None means 20% of epochs (at least 1).
    pub warmup: Option<usize>,
    pub weights_target: LossWeights,
    pub ssim: SsimParams,
    pub sid: SidParams,
    pub optim: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 16,
            lr: 1e-3,
            seed: 7,
            warmup: None,
            weights_target: LossWeights::TARGET,
            ssim: SsimParams::default(),
            sid: SidParams::default(),
            optim: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn warmup_epochs(&self) -> usize {
        self.warmup.unwrap_or((self.epochs / 5).max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("/train/batch", "batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("/train/lr", "learning rate must be positive"));
        }
        Ok(())
    }
}

/// Reconstruction quality on a dataset under seeded masks. The masked-region
/// values are canonical; the `full_*` fields score the raw head predictions
/// over every block, visible ones included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub masked_mae: f64,
    pub masked_psnr: f64,
    pub composite_ssim: f64,
    pub full_mae: f64,
    pub full_psnr: f64,
    pub full_ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub weights: LossWeights,
    pub lr: f64,
    /// Tile-weighted epoch means; None on the eval-only row emitted for
    /// epochs = 0.
    pub train_total: Option<f64>,
    pub train_mae: Option<f64>,
    pub train_ssim_n: Option<f64>,
    pub train_sid_n: Option<f64>,
    pub batches: Vec<LossReport>,
    pub eval: EvalMetrics,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Params,
    pub opt: AdamWState,
    /// Next epoch index to run; equals completed epoch count.
    pub epoch: usize,
    pub run_seed: u64,
    pub history: Vec<EpochMetrics>,
}

/// Fresh state with seeded parameter init and zeroed optimizer moments.
pub fn init_state(
    model: &ModelConfig,
    grouping: &GroupingResult,
    config: &TrainConfig,
) -> Result<TrainState> {
    let params = init_params(model, grouping, derive_path(config.seed, &[SALT_INIT]))?;
    let opt = AdamWState::new(&params, config.optim);
    Ok(TrainState { params, opt, epoch: 0, run_seed: config.seed, history: Vec::new() })
}

/// Metrics for one predicted tile. `pred` is the composite (truth at
/// visible), `pred_full` the raw head output everywhere, `mask` marks masked
/// elements. Empty masks give MAE 0 and PSNR +inf.
pub fn composite_metrics(
    pred: &[f64],
    pred_full: &[f64],
    truth: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    mask: &[bool],
    sp: &SsimParams,
) -> Result<EvalMetrics> {
    let masked_pred: Vec<f64> =
        pred.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    let masked_truth: Vec<f64> =
        truth.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    let (masked_mae, masked_psnr) = if masked_pred.is_empty() {
        (0.0, f64::INFINITY)
    } else {
        (mae(&masked_pred, &masked_truth)?, psnr(&masked_pred, &masked_truth, 1.0)?)
    };
    Ok(EvalMetrics {
        masked_mae,
        masked_psnr,
        composite_ssim: ssim(pred, truth, h, w, channels, sp)?,
        full_mae: mae(pred_full, truth)?,
        full_psnr: psnr(pred_full, truth, 1.0)?,
        full_ssim: ssim(pred_full, truth, h, w, channels, sp)?,
    })
}

/// Mean reconstruction metrics over all tiles with per-tile seeded masks
/// (stable across epochs, independent of training masks).
pub fn evaluate(
    ds: &Dataset,
    grouping: &GroupingResult,
    model: &ModelConfig,
    params: &Params,
    sp: &SsimParams,
    run_seed: u64,
) -> Result<EvalMetrics> {
    if ds.tiles.is_empty() {
        return Err(Error::config("/data", "cannot evaluate an empty dataset"));
    }
    let (h, w, c) = ds.tile_shape();
    let mut sums = [0.0f64; 6];
    for (t, tile) in ds.tiles.iter().enumerate() {
        let grid = crate::masking::make_patch_grid(h, w, model.patch)?;
        let plan = sample_mask(
            &grid,
            grouping.num_groups,
            model.mask_ratio,
            derive_path(run_seed, &[SALT_EVAL, t as u64]),
        );
        let out = forward(tile, grouping, &plan, model, params)?;
        let truth: Vec<f64> = tile.data.iter().map(|&v| v as f64).collect();
        let mask = masked_elements(h, w, c, grouping, &plan, &grid)?;
        let m = composite_metrics(&out.pred, &out.pred_full, &truth, h, w, c, &mask, sp)?;
        for (s, v) in sums.iter_mut().zip([
            m.masked_mae,
            m.masked_psnr,
            m.composite_ssim,
            m.full_mae,
            m.full_psnr,
            m.full_ssim,
        ]) {
            *s += v;
        }
    }
    let n = ds.tiles.len() as f64;
    Ok(EvalMetrics {
        masked_mae: sums[0] / n,
        masked_psnr: sums[1] / n,
        composite_ssim: sums[2] / n,
        full_mae: sums[3] / n,
        full_psnr: sums[4] / n,
        full_ssim: sums[5] / n,
    })
}

/// Run epochs `state.epoch .. config.epochs`: seeded shuffle, per-(epoch,
/// tile) masks, composite loss under the weight schedule, batch-mean
/// gradients, AdamW with cosine learning rate, then held-out evaluation.
/// With epochs = 0 an eval-only row is recorded and parameters stay put.
pub fn train_loop(
    state: &mut TrainState,
    train: &Dataset,
    val: &Dataset,
    grouping: &GroupingResult,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<()> {
    train_epochs(state, train, val, grouping, model, config, config.epochs)
}

/// As `train_loop`, but stops once `state.epoch` reaches `upto` (clamped to
/// `config.epochs`). Schedules still span the full `config.epochs`, so a run
/// split at any epoch boundary is bit-identical to an uninterrupted one.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    state: &mut TrainState,
    train: &Dataset,
    val: &Dataset,
    grouping: &GroupingResult,
    model: &ModelConfig,
    config: &TrainConfig,
    upto: usize,
) -> Result<()> {
    config.validate()?;
    model.validate()?;
    if train.tiles.is_empty() {
        return Err(Error::config("/data", "cannot train on an empty dataset"));
    }
    let eval_ds = if val.tiles.is_empty() { train } else { val };
    let (h, w, c) = train.tile_shape();
    let grid = crate::masking::make_patch_grid(h, w, model.patch)?;
    let warmup = config.warmup_epochs();

    if config.epochs == 0 && state.history.is_empty() {
        let t0 = Instant::now();
        let weights =
            schedule_weights(0, warmup, LossWeights::START, config.weights_target);
        let eval =
            evaluate(eval_ds, grouping, model, &state.params, &config.ssim, state.run_seed)?;
        state.history.push(EpochMetrics {
            epoch: 0,
            weights,
            lr: cosine_lr(config.lr, 0, 0),
            train_total: None,
            train_mae: None,
            train_ssim_n: None,
            train_sid_n: None,
            batches: Vec::new(),
            eval,
            seconds: t0.elapsed().as_secs_f64(),
        });
        return Ok(());
    }

    while state.epoch < upto.min(config.epochs) {
        let e = state.epoch;
        let t0 = Instant::now();
        let weights =
            schedule_weights(e, warmup, LossWeights::START, config.weights_target);
        let lr = cosine_lr(config.lr, e, config.epochs);

        let mut order: Vec<usize> = (0..train.tiles.len()).collect();
        let mut rng = Xoshiro256::seeded(derive_path(state.run_seed, &[SALT_SHUFFLE, e as u64]));
        rng.shuffle(&mut order);

        let mut batches = Vec::new();
        let mut epoch_sums = [0.0f64; 4];
        for chunk in order.chunks(config.batch) {
            let mut grad_sum: Option<Vec<(String, Tensor)>> = None;
            let mut batch_sums = [0.0f64; 4];
            let mut timings = [0.0f64; 3];
            for &t in chunk {
                let tile = &train.tiles[t];
                let plan = sample_mask(
                    &grid,
                    grouping.num_groups,
                    model.mask_ratio,
                    derive_path(state.run_seed, &[SALT_MASK, e as u64, t as u64]),
                );
                let out = forward(tile, grouping, &plan, model, &state.params)?;
                let truth: Vec<f64> = tile.data.iter().map(|&v| v as f64).collect();
                let (report, grad) = composite_loss(
                    &out.pred,
                    &truth,
                    h,
                    w,
                    c,
                    grouping,
                    &plan,
                    &grid,
                    weights,
                    &config.ssim,
                    &config.sid,
                )?;
                if !report.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {} at epoch {e}, tile {t}",
                        report.total
                    )));
                }
                let pgrads =
                    backward(&out, tile, grouping, &plan, model, &state.params, &grad)?;
                match &mut grad_sum {
                    Some(acc) => {
                        for ((_, a), (_, g)) in acc.iter_mut().zip(&pgrads) {
                            for (x, y) in a.data.iter_mut().zip(&g.data) {
                                *x += y;
                            }
                        }
                    }
                    None => grad_sum = Some(pgrads),
                }
                batch_sums[0] += report.total;
                batch_sums[1] += report.mae;
                batch_sums[2] += report.ssim_n;
                batch_sums[3] += report.sid_n;
                timings[0] += report.timings_s.mae;
                timings[1] += report.timings_s.ssim;
                timings[2] += report.timings_s.sid;
            }
            let bn = chunk.len() as f64;
            let mut grads = grad_sum.expect("nonempty batch");
            for (_, g) in &mut grads {
                for v in &mut g.data {
                    *v /= bn;
                }
            }
            adamw_step(&mut state.params, &grads, &mut state.opt, lr)?;
            batches.push(LossReport {
                total: batch_sums[0] / bn,
                mae: batch_sums[1] / bn,
                ssim_n: batch_sums[2] / bn,
                sid_n: batch_sums[3] / bn,
                weights,
                timings_s: crate::loss::LossTimings {
                    mae: timings[0],
                    ssim: timings[1],
                    sid: timings[2],
                },
            });
            for (s, v) in epoch_sums.iter_mut().zip(batch_sums) {
                *s += v;
            }
        }

        let n = train.tiles.len() as f64;
        let eval =
            evaluate(eval_ds, grouping, model, &state.params, &config.ssim, state.run_seed)?;
        state.history.push(EpochMetrics {
            epoch: e,
            weights,
            lr,
            train_total: Some(epoch_sums[0] / n),
            train_mae: Some(epoch_sums[1] / n),
            train_ssim_n: Some(epoch_sums[2] / n),
            train_sid_n: Some(epoch_sums[3] / n),
            batches,
            eval,
            seconds: t0.elapsed().as_secs_f64(),
        });
        state.epoch = e + 1;
    }
    Ok(())
}

// ---- checkpoints --------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"TMCK";

fn push_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let nb = name.as_bytes();
    if nb.len() > u16::MAX as usize {
        return Err(Error::Format(format!("checkpoint name too long: {name}")));
    }
    buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
    buf.extend_from_slice(nb);
    buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

/// Serialized checkpoint bytes: magic, parameter tensors, optimizer moments
/// under "m."/"v." prefixes, then step counter and run seed.
pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&(state.params.len() as u32).to_le_bytes());
    for (name, t) in state.params.iter() {
        push_tensor(&mut buf, name, t)?;
    }
    buf.extend_from_slice(&((state.opt.m.len() + state.opt.v.len()) as u32).to_le_bytes());
    for (name, t) in &state.opt.m {
        push_tensor(&mut buf, &format!("m.{name}"), t)?;
    }
    for (name, t) in &state.opt.v {
        push_tensor(&mut buf, &format!("v.{name}"), t)?;
    }
    buf.extend_from_slice(&state.opt.step.to_le_bytes());
    buf.extend_from_slice(&state.run_seed.to_le_bytes());
    Ok(buf)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    config: serde_json::Value,
}

/// Atomic write (temp file + rename) of the binary checkpoint and its
/// `<path>.meta.json` sidecar carrying the epoch and a config echo.
pub fn save_checkpoint(state: &TrainState, path: &Path, config_echo: &serde_json::Value) -> Result<()> {
    let bytes = checkpoint_bytes(state)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;

    let meta = CheckpointMeta { epoch: state.epoch, config: config_echo.clone() };
    let meta_path = sidecar_path(path);
    let tmp = meta_path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&meta).expect("meta serializes"))?;
    fs::rename(&tmp, &meta_path)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub moments: Vec<(String, Tensor)>,
    pub step: u64,
    pub run_seed: u64,
    pub epoch: usize,
    pub config_echo: serde_json::Value,
}

fn read_tensor(bytes: &[u8], pos: &mut usize) -> Result<(String, Tensor)> {
    let need = |pos: usize, n: usize| -> Result<()> {
        if pos + n > bytes.len() {
            Err(Error::Format("checkpoint truncated".into()))
        } else {
            Ok(())
        }
    };
    need(*pos, 2)?;
    let name_len = u16::from_le_bytes([bytes[*pos], bytes[*pos + 1]]) as usize;
    *pos += 2;
    need(*pos, name_len)?;
    let name = std::str::from_utf8(&bytes[*pos..*pos + name_len])
        .map_err(|_| Error::Format("checkpoint name not UTF-8".into()))?
        .to_string();
    *pos += name_len;
    need(*pos, 4)?;
    let ndim = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap()) as usize;
    *pos += 4;
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: usize = 1;
    for _ in 0..ndim {
        need(*pos, 4)?;
        let d = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap()) as usize;
        *pos += 4;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::Format("checkpoint dimension overflow".into()))?;
        shape.push(d);
    }
    need(*pos, numel * 4)?;
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let at = *pos + i * 4;
        data.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64);
    }
    *pos += numel * 4;
    Ok((name, Tensor { shape, data }))
}

/// Parse checkpoint bytes; the sidecar is read separately by
/// `load_checkpoint`.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, Vec<(String, Tensor)>, u64, u64)> {
    if bytes.len() < 8 || &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut pos = 4;
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    pos += 4;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(read_tensor(bytes, &mut pos)?);
    }
    if pos + 4 > bytes.len() {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let mcount = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let mut moments = Vec::with_capacity(mcount);
    for _ in 0..mcount {
        moments.push(read_tensor(bytes, &mut pos)?);
    }
    if pos + 16 != bytes.len() {
        return Err(Error::Format("checkpoint has trailing or missing footer bytes".into()));
    }
    let step = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    let run_seed = u64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap());
    Ok((tensors, moments, step, run_seed))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let (tensors, moments, step, run_seed) = checkpoint_from_bytes(&bytes)?;
    let meta_path = sidecar_path(path);
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&meta_path)?)
        .map_err(|e| Error::Format(format!("checkpoint sidecar: {e}")))?;
    Ok(Checkpoint {
        tensors,
        moments,
        step,
        run_seed,
        epoch: meta.epoch,
        config_echo: meta.config,
    })
}

/// Rebuild training state from a checkpoint, validating names and shapes
/// against a fresh parameter registry for the same config and grouping.
pub fn resume_state(
    ckpt: Checkpoint,
    model: &ModelConfig,
    grouping: &GroupingResult,
    config: &TrainConfig,
) -> Result<TrainState> {
    let mut state = init_state(model, grouping, config)?;
    state.run_seed = ckpt.run_seed;
    state.epoch = ckpt.epoch;
    state.opt.step = ckpt.step;
    if ckpt.tensors.len() != state.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model needs {}",
            ckpt.tensors.len(),
            state.params.len()
        )));
    }
    for (name, t) in ckpt.tensors {
        let p = state.params.get_mut(&name)?;
        if p.shape != t.shape {
            return Err(Error::Format(format!("checkpoint shape mismatch for {name}")));
        }
        *p = t;
    }
    if ckpt.moments.len() != state.opt.m.len() + state.opt.v.len() {
        return Err(Error::Format("checkpoint optimizer section incomplete".into()));
    }
    for (name, t) in ckpt.moments {
        let (prefix, rest) = name.split_at(2);
        let slot = match prefix {
            "m." => &mut state.opt.m,
            "v." => &mut state.opt.v,
            _ => return Err(Error::Format(format!("unknown moment prefix in {name}"))),
        };
        let entry = slot
            .iter_mut()
            .find(|(n, _)| n == rest)
            .ok_or_else(|| Error::Format(format!("unknown moment tensor {name}")))?;
        if entry.1.shape != t.shape {
            return Err(Error::Format(format!("checkpoint shape mismatch for {name}")));
        }
        entry.1 = t;
    }
    Ok(state)
}
