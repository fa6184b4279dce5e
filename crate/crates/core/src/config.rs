//! Run configuration: a TOML file provides defaults, CLI flags override
//! individual fields, and the fully resolved struct is validated once and
//! hashed so every artifact can be traced back to its exact settings.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericWidth {
    F32,
    F64,
}

impl std::fmt::Display for NumericWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NumericWidth::F32 => write!(f, "f32"),
            NumericWidth::F64 => write!(f, "f64"),
        }
    }
}

impl std::str::FromStr for NumericWidth {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(NumericWidth::F32),
            "f64" => Ok(NumericWidth::F64),
            other => Err(format!("unknown numeric width `{other}` (use f32 or f64)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeighterGranularity {
    Step,
    Epoch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Processed-store directory produced by `prepare`.
    pub store: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            store: PathBuf::from("store"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 2,
            dim: 64,
            heads: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSection {
    /// Fixed history length n; positions beyond it are dropped, shorter
    /// histories are left-padded.
    pub n: usize,
}

impl Default for SequenceSection {
    fn default() -> Self {
        SequenceSection { n: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Early-stop patience in epochs on validation NDCG@10.
    pub patience: usize,
    pub seed: u64,
    pub width: NumericWidth,
    /// Worker threads for evaluation and enhancer scoring (training steps
    /// are single-owner regardless).
    pub workers: usize,
    /// Per-user negative-set size |S|.
    pub negatives: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 64,
            lr: 1e-3,
            max_epochs: 100,
            patience: 5,
            seed: 42,
            width: NumericWidth::F64,
            workers: 1,
            negatives: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerSection {
    pub enabled: bool,
    /// Hard-set size m (0 disables hard mining).
    pub hard_set_size: usize,
    /// Potential-favorite threshold α in (0, 1]; 1.0 disables detection
    /// (ranking scores are strictly below 1).
    pub potential_threshold: f64,
    /// Write a per-epoch audit CSV of scored negatives and actions.
    pub audit: bool,
}

impl Default for EnhancerSection {
    fn default() -> Self {
        EnhancerSection {
            enabled: true,
            hard_set_size: 5,
            potential_threshold: 0.85,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeighterSection {
    pub enabled: bool,
    pub temperature: f64,
    pub lambda_retrieval: f64,
    pub lambda_ranking: f64,
    pub ema_decay: f64,
    pub granularity: WeighterGranularity,
    /// After the first epoch, set λ_ranking so both stage losses start at
    /// the same magnitude.
    pub auto_scale: bool,
}

impl Default for WeighterSection {
    fn default() -> Self {
        WeighterSection {
            enabled: true,
            temperature: 1.0,
            lambda_retrieval: 1.0,
            lambda_ranking: 1.0,
            ema_decay: 0.9,
            granularity: WeighterGranularity::Step,
            auto_scale: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub sequence: SequenceSection,
    pub training: TrainingSection,
    pub enhancer: EnhancerSection,
    pub weighter: WeighterSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization; recorded in artifacts.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml_string().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Cross-field validation; every downstream module constraint that can
    /// be caught before touching data is caught here.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        let m = &self.model;
        if m.layers == 0 {
            return fail("model.layers must be >= 1".into());
        }
        if m.heads == 0 || m.dim == 0 {
            return fail("model.dim and model.heads must be >= 1".into());
        }
        if !m.dim.is_multiple_of(m.heads) {
            return fail(format!(
                "model.dim ({}) must be divisible by model.heads ({})",
                m.dim, m.heads
            ));
        }
        if !m.dim.is_multiple_of(2) {
            return fail(format!(
                "model.dim ({}) must be even (ranking head narrows to dim/2)",
                m.dim
            ));
        }
        if self.sequence.n < 3 {
            return fail(format!(
                "sequence.n ({}) must be >= 3 (leave-one-out needs train/valid/test)",
                self.sequence.n
            ));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return fail("training.batch_size must be >= 1".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return fail(format!(
                "training.lr ({}) must be positive and finite",
                t.lr
            ));
        }
        if t.max_epochs == 0 {
            return fail("training.max_epochs must be >= 1".into());
        }
        if t.patience == 0 {
            return fail("training.patience must be >= 1".into());
        }
        if t.workers == 0 {
            return fail("training.workers must be >= 1".into());
        }
        if t.negatives == 0 {
            return fail("training.negatives must be >= 1".into());
        }
        let e = &self.enhancer;
        if e.hard_set_size > t.negatives {
            return fail(format!(
                "enhancer.hard_set_size ({}) must not exceed training.negatives ({})",
                e.hard_set_size, t.negatives
            ));
        }
        if !(e.potential_threshold > 0.0 && e.potential_threshold <= 1.0) {
            return fail(format!(
                "enhancer.potential_threshold ({}) must lie in (0, 1]",
                e.potential_threshold
            ));
        }
        let w = &self.weighter;
        if !(w.temperature > 0.0 && w.temperature.is_finite()) {
            return fail(format!(
                "weighter.temperature ({}) must be positive and finite",
                w.temperature
            ));
        }
        if !(w.lambda_retrieval > 0.0 && w.lambda_ranking > 0.0) {
            return fail("weighter lambda scales must be positive".into());
        }
        if !(0.0..1.0).contains(&w.ema_decay) {
            return fail(format!(
                "weighter.ema_decay ({}) must lie in [0, 1)",
                w.ema_decay
            ));
        }
        Ok(())
    }
}
