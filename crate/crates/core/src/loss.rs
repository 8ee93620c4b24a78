//! Reconstruction losses and metrics: masked mean absolute error, windowed
//! SSIM and its [0,1] complement, spectral information divergence and its
//! exponential normalization, PSNR, the linear weight schedule, and the
//! scheduled composite loss with analytic gradients and per-term timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::grouping::GroupingResult;
use crate::masking::{MaskPlan, PatchGrid};
use crate::{Error, Result};

/// Composite loss term weights (eta: MAE, lambda: SSIM_N, mu: SID_N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl LossWeights {
    /// Schedule start: pure MAE.
    pub const START: LossWeights = LossWeights { eta: 1.0, lambda: 0.0, mu: 0.0 };
    /// Schedule target.
    pub const TARGET: LossWeights = LossWeights { eta: 0.7, lambda: 0.15, mu: 0.15 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    /// Uniform window side length; odd, at least 3.
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        // (0.01 L)^2 and (0.03 L)^2 with L = 1 on normalized reflectance
        SsimParams { window: 7, c1: 1e-4, c2: 9e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SidParams {
    /// Exponential scale in SID_N = 1 - exp(-alpha * SID).
    pub alpha: f64,
    /// Stabilizer for spectrum sums and the component floor.
    pub epsilon: f64,
}

impl Default for SidParams {
    fn default() -> Self {
        SidParams { alpha: 0.5, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTimings {
    pub mae: f64,
    pub ssim: f64,
    pub sid: f64,
}

/// Per-term values, the weights in force, and wall time spent per term.
/// total = eta*mae + lambda*ssim_n + mu*sid_n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub mae: f64,
    pub ssim_n: f64,
    pub sid_n: f64,
    pub weights: LossWeights,
    pub timings_s: LossTimings,
}

// ---- elementwise metrics ----------------------------------------------------

/// Mean absolute difference over all elements.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("mae: {} vs {}", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(&a, &b)| (a - b).abs()).sum::<f64>() / n)
}

/// 10·log10(peak²/MSE); +infinity when MSE is zero.
pub fn psnr(pred: &[f64], target: &[f64], peak: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("psnr: {} vs {}", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let mse = pred.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

// ---- SSIM -------------------------------------------------------------------

/// Mean SSIM over all fully interior uniform windows of every channel plane.
/// Multi-channel inputs (band-sequential, `channels` planes of h×w) average
/// the per-channel scores.
pub fn ssim(x: &[f64], y: &[f64], h: usize, w: usize, channels: usize, p: &SsimParams) -> Result<f64> {
    ssim_impl(x, y, h, w, channels, p, None)
}

pub fn ssim_n(x: &[f64], y: &[f64], h: usize, w: usize, channels: usize, p: &SsimParams) -> Result<f64> {
    Ok((1.0 - ssim(x, y, h, w, channels, p)?) / 2.0)
}

/// SSIM value and, when `grad_x` is given, the gradient of the mean SSIM
/// with respect to x accumulated into it (same layout as x).
fn ssim_impl(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    p: &SsimParams,
    mut grad_x: Option<&mut [f64]>,
) -> Result<f64> {
    if x.len() != y.len() || x.len() != h * w * channels {
        return Err(Error::Shape(format!("ssim: {} vs {} ({h}x{w}x{channels})", x.len(), y.len())));
    }
    let win = p.window;
    if win < 3 || win % 2 == 0 {
        return Err(Error::config("/loss/ssim/window", "window must be odd and >= 3"));
    }
    if h < win || w < win {
        return Err(Error::Window { h, w, window: win });
    }
    let wy = h - win + 1;
    let wx = w - win + 1;
    let n = (win * win) as f64;
    let windows_total = (wy * wx * channels) as f64;
    let mut acc = 0.0;
    for c in 0..channels {
        let xp = &x[c * h * w..(c + 1) * h * w];
        let yp = &y[c * h * w..(c + 1) * h * w];
        for oy in 0..wy {
            for ox in 0..wx {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..win {
                    let row = (oy + dy) * w + ox;
                    for dx in 0..win {
                        let a = xp[row + dx];
                        let b = yp[row + dx];
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let mx = sx / n;
                let my = sy / n;
                let vx = sxx / n - mx * mx;
                let vy = syy / n - my * my;
                let cxy = sxy / n - mx * my;
                let a1 = 2.0 * mx * my + p.c1;
                let a2 = 2.0 * cxy + p.c2;
                let b1 = mx * mx + my * my + p.c1;
                let b2 = vx + vy + p.c2;
                let s = (a1 * a2) / (b1 * b2);
                acc += s;
                if let Some(gx) = grad_x.as_deref_mut() {
                    // d s / d x_i = (2/n) [ (my·a2 + a1·(y_i−my))/(b1 b2)
                    //                       − s·(mx/b1 + (x_i−mx)/b2) ]
                    let gp = &mut gx[c * h * w..(c + 1) * h * w];
                    let k = 2.0 / (n * windows_total);
                    let inv_b1b2 = 1.0 / (b1 * b2);
                    let s_b1 = s / b1;
                    let s_b2 = s / b2;
                    for dy in 0..win {
                        let row = (oy + dy) * w + ox;
                        for dx in 0..win {
                            let a = xp[row + dx];
                            let b = yp[row + dx];
                            gp[row + dx] += k
                                * ((my * a2 + a1 * (b - my)) * inv_b1b2
                                    - (mx * s_b1 + (a - mx) * s_b2));
                        }
                    }
                }
            }
        }
    }
    Ok(acc / windows_total)
}

// ---- SID --------------------------------------------------------------------

/// Symmetric spectral information divergence, averaged over pixels. Each
/// pixel's spectrum (length `channels`, band-sequential stride h·w) is
/// normalized by its sum plus epsilon; components are floored at epsilon
/// before the logs.
pub fn sid(x: &[f64], y: &[f64], pixels: usize, channels: usize, p: &SidParams) -> Result<f64> {
    sid_impl(x, y, pixels, channels, p, None)
}

pub fn sid_n(x: &[f64], y: &[f64], pixels: usize, channels: usize, p: &SidParams) -> Result<f64> {
    Ok(1.0 - (-p.alpha * sid(x, y, pixels, channels, p)?).exp())
}

fn sid_impl(
    x: &[f64],
    y: &[f64],
    pixels: usize,
    channels: usize,
    p: &SidParams,
    mut grad_x: Option<&mut [f64]>,
) -> Result<f64> {
    if x.len() != y.len() || x.len() != pixels * channels {
        return Err(Error::Shape(format!("sid: {} vs {} ({pixels}px x {channels}ch)", x.len(), y.len())));
    }
    let eps = p.epsilon;
    let inv_pixels = 1.0 / pixels.max(1) as f64;
    let mut total = 0.0;
    let mut px = vec![0.0f64; channels];
    let mut qx = vec![0.0f64; channels];
    let mut g = vec![0.0f64; channels];
    for pix in 0..pixels {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for c in 0..channels {
            sx += x[c * pixels + pix];
            sy += y[c * pixels + pix];
        }
        let inv_sx = 1.0 / (sx + eps);
        let inv_sy = 1.0 / (sy + eps);
        let mut d = 0.0;
        for c in 0..channels {
            px[c] = x[c * pixels + pix] * inv_sx;
            qx[c] = y[c * pixels + pix] * inv_sy;
            let pf = px[c].max(eps);
            let qf = qx[c].max(eps);
            d += (pf - qf) * (pf.ln() - qf.ln());
        }
        total += d;
        if let Some(gx) = grad_x.as_deref_mut() {
            // dD/dp_c = ln(p/q) + 1 - q/p above the floor, 0 below it;
            // back through p_c = x_c/(sum+eps): (g_c - sum_i g_i p_i)/(sum+eps)
            let mut gdotp = 0.0;
            for c in 0..channels {
                g[c] = if px[c] > eps {
                    let pf = px[c];
                    let qf = qx[c].max(eps);
                    (pf.ln() - qf.ln()) + 1.0 - qf / pf
                } else {
                    0.0
                };
                gdotp += g[c] * px[c];
            }
            for c in 0..channels {
                gx[c * pixels + pix] += (g[c] - gdotp) * inv_sx * inv_pixels;
            }
        }
    }
    Ok(total * inv_pixels)
}

// ---- schedule ---------------------------------------------------------------

/// Linear interpolation from `start` to `target` over the first `warmup`
/// epochs, clamped at `target` afterwards. Endpoints are reproduced exactly.
pub fn schedule_weights(epoch: usize, warmup: usize, start: LossWeights, target: LossWeights) -> LossWeights {
    let warmup = warmup.max(1);
    let t = (epoch as f64 / warmup as f64).min(1.0);
    let lerp = |a: f64, b: f64| (1.0 - t) * a + t * b;
    LossWeights {
        eta: lerp(start.eta, target.eta),
        lambda: lerp(start.lambda, target.lambda),
        mu: lerp(start.mu, target.mu),
    }
}

// ---- composite --------------------------------------------------------------

/// Boolean per-element mask (band-sequential cube layout) marking pixels in
/// masked (group, patch) blocks.
pub fn masked_elements(
    h: usize,
    w: usize,
    channels: usize,
    grouping: &GroupingResult,
    plan: &MaskPlan,
    grid: &PatchGrid,
) -> Result<Vec<bool>> {
    if plan.groups.len() != grouping.num_groups || grouping.channels() != channels {
        return Err(Error::Shape("plan/grouping/cube mismatch".into()));
    }
    if grid.rows * grid.patch != h || grid.cols * grid.patch != w {
        return Err(Error::Shape("grid does not tile the cube".into()));
    }
    let mut patch_masked = vec![false; grouping.num_groups * grid.num_patches];
    for (g, gm) in plan.groups.iter().enumerate() {
        for &pt in &gm.masked {
            patch_masked[g * grid.num_patches + pt] = true;
        }
    }
    let mut out = vec![false; channels * h * w];
    for c in 0..channels {
        let g = grouping.assignment[c];
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = patch_masked[g * grid.num_patches + grid.patch_of(y, x)];
            }
        }
    }
    Ok(out)
}

/// Scheduled composite reconstruction loss on the masked-prediction /
/// visible-truth composite image.
///
/// The composite takes `pred` at masked (group, patch) blocks and `target`
/// elsewhere. MAE is computed over masked pixels only; SSIM_N and SID_N over
/// the full composite against the target. All three term values are always
/// evaluated; gradient work is skipped for zero-weighted terms. The returned
/// gradient is with respect to `pred` and is zero at visible positions.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    pred: &[f64],
    target: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    grouping: &GroupingResult,
    plan: &MaskPlan,
    grid: &PatchGrid,
    weights: LossWeights,
    sp: &SsimParams,
    dp: &SidParams,
) -> Result<(LossReport, Vec<f64>)> {
    if pred.len() != target.len() || pred.len() != channels * h * w {
        return Err(Error::Shape(format!(
            "composite_loss: pred {} target {} expected {}",
            pred.len(),
            target.len(),
            channels * h * w
        )));
    }
    let mask = masked_elements(h, w, channels, grouping, plan, grid)?;
    let n_masked = mask.iter().filter(|&&m| m).count();

    let mut composite = target.to_vec();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            composite[i] = pred[i];
        }
    }

    let mut grad = vec![0.0f64; pred.len()];
    let mut timings = LossTimings::default();

    // MAE over masked pixels only
    let t0 = Instant::now();
    let mut mae_term = 0.0;
    if n_masked > 0 {
        let inv = 1.0 / n_masked as f64;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                mae_term += (pred[i] - target[i]).abs() * inv;
            }
        }
        if weights.eta != 0.0 {
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    let d = pred[i] - target[i];
                    grad[i] += weights.eta * inv * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                }
            }
        }
    }
    timings.mae = t0.elapsed().as_secs_f64();

    // SSIM_N over the full composite
    let t1 = Instant::now();
    let ssim_value;
    if weights.lambda != 0.0 {
        let mut g = vec![0.0f64; pred.len()];
        ssim_value = ssim_impl(&composite, target, h, w, channels, sp, Some(&mut g))?;
        let k = -0.5 * weights.lambda; // d ssim_n = -(1/2) d ssim
        for (i, &m) in mask.iter().enumerate() {
            if m {
                grad[i] += k * g[i];
            }
        }
    } else {
        ssim_value = ssim_impl(&composite, target, h, w, channels, sp, None)?;
    }
    let ssim_n_term = (1.0 - ssim_value) / 2.0;
    timings.ssim = t1.elapsed().as_secs_f64();

    // SID_N over the full composite
    let t2 = Instant::now();
    let pixels = h * w;
    let sid_value;
    if weights.mu != 0.0 {
        let mut g = vec![0.0f64; pred.len()];
        sid_value = sid_impl(&composite, target, pixels, channels, dp, Some(&mut g))?;
        let k = weights.mu * dp.alpha * (-dp.alpha * sid_value).exp();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                grad[i] += k * g[i];
            }
        }
    } else {
        sid_value = sid_impl(&composite, target, pixels, channels, dp, None)?;
    }
    let sid_n_term = 1.0 - (-dp.alpha * sid_value).exp();
    timings.sid = t2.elapsed().as_secs_f64();

    let total = weights.eta * mae_term + weights.lambda * ssim_n_term + weights.mu * sid_n_term;
    let report = LossReport {
        total,
        mae: mae_term,
        ssim_n: ssim_n_term,
        sid_n: sid_n_term,
        weights,
        timings_s: timings,
    };
    Ok((report, grad))
}
