//! Run configuration: one JSON document with per-section defaults. Unknown
//! keys are rejected; errors carry a JSON-pointer path to the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use specmae_core::grouping::{Strategy, DEFAULT_SR_BOUNDARIES_NM, DEFAULT_VNIR_BOUNDARY_NM};
use specmae_core::loss::{LossWeights, SidParams, SsimParams};
use specmae_core::model::ModelConfig;
use specmae_core::synth::SyntheticSpec;
use specmae_core::trainer::TrainConfig;
use specmae_core::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub grouping: GroupingSection,
    pub masking: MaskingSection,
    pub loss: LossSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Synthetic generator spec; required by `synth`.
    pub synthetic: Option<SyntheticSection>,
    /// Scene files (HSC) consumed by `ingest`.
    pub paths: Vec<String>,
    /// Square tile side for `ingest` scene tiling.
    pub tile: usize,
    /// Channels uniformly equal to this raw value are dropped at ingest.
    pub sentinel: f32,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            synthetic: None,
            paths: Vec::new(),
            tile: 64,
            sentinel: -32768.0,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub tiles: usize,
    pub size: usize,
    pub channels: usize,
    pub planted_groups: usize,
    pub field_smoothness: usize,
    pub noise_sigma: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            tiles: 200,
            size: 16,
            channels: 12,
            planted_groups: 5,
            field_smoothness: 2,
            noise_sigma: 0.002,
        }
    }
}

/// `strategy` accepts the five strategy names or ALL (grouping table only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StrategyChoice {
    All,
    Sci,
    Kmeans,
    Hac,
    VnirSwir,
    SoilReflectance,
}

impl StrategyChoice {
    pub fn single(&self) -> Option<Strategy> {
        match self {
            StrategyChoice::All => None,
            StrategyChoice::Sci => Some(Strategy::Sci),
            StrategyChoice::Kmeans => Some(Strategy::Kmeans),
            StrategyChoice::Hac => Some(Strategy::Hac),
            StrategyChoice::VnirSwir => Some(Strategy::VnirSwir),
            StrategyChoice::SoilReflectance => Some(Strategy::SoilReflectance),
        }
    }

    pub fn list(&self) -> Vec<Strategy> {
        match self.single() {
            Some(s) => vec![s],
            None => Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingSection {
    pub strategy: StrategyChoice,
    pub num_groups: usize,
    pub sr_boundaries: Vec<f64>,
    pub vnir_boundary: f64,
    pub kmeans_restarts: usize,
}

impl Default for GroupingSection {
    fn default() -> Self {
        GroupingSection {
            strategy: StrategyChoice::Sci,
            num_groups: 5,
            sr_boundaries: DEFAULT_SR_BOUNDARIES_NM.to_vec(),
            vnir_boundary: DEFAULT_VNIR_BOUNDARY_NM,
            kmeans_restarts: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingSection {
    pub ratio: f64,
    pub patch: usize,
}

impl Default for MaskingSection {
    fn default() -> Self {
        MaskingSection { ratio: 0.75, patch: 4 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub weights_target: LossWeights,
    /// Linear warmup epochs; null means epochs/5, at least 1.
    pub warmup: Option<usize>,
    pub ssim: SsimParams,
    pub sid: SidParams,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            weights_target: LossWeights::TARGET,
            warmup: None,
            ssim: SsimParams::default(),
            sid: SidParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { dim: 64, depth: 2, heads: 4, dec_dim: 32, dec_depth: 1 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { epochs: 30, batch: 16, lr: 1e-3, seed: 7 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let mut de = serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::config(&pointer(e.path()), e.inner().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.tile == 0 {
            return Err(Error::config("/data/tile", "tile side must be positive"));
        }
        if !(d.train_frac >= 0.0 && d.val_frac >= 0.0 && d.train_frac + d.val_frac <= 1.0) {
            return Err(Error::config(
                "/data/train_frac",
                "fractions must be nonnegative and sum to at most 1",
            ));
        }
        if self.grouping.num_groups == 0 {
            return Err(Error::config("/grouping/num_groups", "need at least one group"));
        }
        let m = &self.masking;
        if !(0.0..=1.0).contains(&m.ratio) {
            return Err(Error::config("/masking/ratio", "mask ratio must lie in [0, 1]"));
        }
        if m.patch == 0 {
            return Err(Error::config("/masking/patch", "patch side must be positive"));
        }
        let w = self.loss.weights_target;
        if !(w.eta >= 0.0 && w.lambda >= 0.0 && w.mu >= 0.0) {
            return Err(Error::config("/loss/weights_target", "weights must be nonnegative"));
        }
        self.train_config(self.train.seed).validate()?;
        Ok(())
    }

    /// Synthetic spec for `synth`; absent section is a config error.
    pub fn synthetic_spec(&self) -> Result<(SyntheticSpec, SyntheticSection)> {
        let s = self
            .data
            .synthetic
            .ok_or_else(|| Error::config("/data/synthetic", "section required for synth"))?;
        let spec = SyntheticSpec::planted(
            s.planted_groups,
            s.channels,
            s.field_smoothness,
            s.noise_sigma,
        )?;
        if s.tiles == 0 || s.size == 0 {
            return Err(Error::config("/data/synthetic", "tiles and size must be positive"));
        }
        Ok((spec, s))
    }

    /// Model config for a concrete group count (the computed grouping's, which
    /// may differ from /grouping/num_groups for wavelength-driven strategies).
    pub fn model_config(&self, groups: usize) -> ModelConfig {
        ModelConfig {
            patch: self.masking.patch,
            dim: self.model.dim,
            depth: self.model.depth,
            heads: self.model.heads,
            dec_dim: self.model.dec_dim,
            dec_depth: self.model.dec_depth,
            groups,
            mask_ratio: self.masking.ratio,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch: self.train.batch,
            lr: self.train.lr,
            seed,
            warmup: self.loss.warmup,
            weights_target: self.loss.weights_target,
            ssim: self.loss.ssim,
            sid: self.loss.sid,
            optim: Default::default(),
        }
    }
}

/// serde path ("data.synthetic.tiles") rendered as a JSON pointer.
fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            serde_path_to_error::Segment::Map { key } => {
                out.push('/');
                out.push_str(key);
            }
            serde_path_to_error::Segment::Seq { index } => {
                out.push('/');
                out.push_str(&index.to_string());
            }
            serde_path_to_error::Segment::Enum { variant } => {
                out.push('/');
                out.push_str(variant);
            }
            serde_path_to_error::Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
