//! Output helpers shared by the subcommands: JSON with explicit
//! infinity encoding, CSV cell formatting, and atomic text writes.
//!
//! Wall-time masking rule: the CSV columns `seconds` and
//! `seconds_per_epoch` and the JSON keys `seconds` and `timings_s` are the
//! only fields that may differ between two runs with identical config and
//! seed; byte-level comparisons must exclude exactly those.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use specmae_core::trainer::EvalMetrics;
use specmae_core::Result;

/// JSON has no infinities; encode them as the strings "inf"/"-inf" so
/// reports stay loadable (serde_json would emit null otherwise).
pub fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

/// CSV cell for a float: shortest round-trip form, "inf"/"-inf"/"nan"
/// for non-finite values.
pub fn csv_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".to_string()
    } else if v < 0.0 {
        "-inf".to_string()
    } else {
        "nan".to_string()
    }
}

pub fn eval_json(m: &EvalMetrics) -> Value {
    json!({
        "masked_mae": json_f64(m.masked_mae),
        "masked_psnr": json_f64(m.masked_psnr),
        "composite_ssim": json_f64(m.composite_ssim),
        "full_mae": json_f64(m.full_mae),
        "full_psnr": json_f64(m.full_psnr),
        "full_ssim": json_f64(m.full_ssim),
    })
}

/// Write `text` via a temp file + rename so readers never see a torn file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}
