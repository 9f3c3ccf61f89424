//! Run configuration: one JSON document, strict keys, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::disguiser::{ConstraintSet, GanConfig};
use crate::error::{Error, Result};
use crate::spectral::BandSet;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DummyConfig {
    pub k: usize,
    pub m: usize,
}

impl Default for DummyConfig {
    fn default() -> Self {
        Self { k: 5, m: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub depth: usize,
    /// First-stage channels; 64 is the standard network.
    pub width: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub patience: Option<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { depth: 18, width: 64, epochs: 50, batch: 64, lr: 1e-3, patience: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Trial-file directory; defaults to `<workdir>/corpus`.
    pub corpus_root: Option<PathBuf>,
    pub seed: u64,
    pub image_size: usize,
    pub bands: BandSet,
    pub percentiles: [f64; 2],
    pub split_ratios: [f64; 3],
    pub dummy: DummyConfig,
    pub classifier: ClassifierConfig,
    pub gan: GanConfig,
    /// Constraint set used by `train-gan` when the flag is absent.
    pub constraints: ConstraintSet,
    /// Split the evaluation and ablation reports run on.
    pub eval_split: Split,
    pub synthetic: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_root: None,
            seed: 0,
            image_size: 32,
            bands: BandSet::default(),
            percentiles: [1.0, 99.0],
            split_ratios: [0.7, 0.2, 0.1],
            dummy: DummyConfig::default(),
            classifier: ClassifierConfig::default(),
            gan: GanConfig::default(),
            constraints: ConstraintSet::ALC,
            eval_split: Split::Validation,
            synthetic: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::Config(s));
        self.bands.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return bad(format!("image_size {} must be a multiple of 4, at least 8", self.image_size));
        }
        let [lo, hi] = self.percentiles;
        if !(0.0..100.0).contains(&lo) || !(lo < hi && hi <= 100.0) {
            return bad(format!("percentiles {:?} must satisfy 0 <= lo < hi <= 100", self.percentiles));
        }
        let r = self.split_ratios;
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split_ratios {r:?} must be non-negative and sum to 1"));
        }
        if self.dummy.k < 2 || self.dummy.m == 0 {
            return bad(format!("dummy.k must be >= 2 and dummy.m >= 1, got k={} m={}", self.dummy.k, self.dummy.m));
        }
        let c = &self.classifier;
        if ![18, 34, 50].contains(&c.depth) {
            return bad(format!("classifier.depth {} not in {{18, 34, 50}}", c.depth));
        }
        if c.width == 0 || c.batch == 0 || !(c.lr > 0.0 && c.lr.is_finite()) {
            return bad("classifier width, batch and lr must be positive".into());
        }
        self.gan.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.synthetic.subjects == 0 || self.synthetic.trials_per_condition == 0 {
            return bad("synthetic corpus needs at least one subject and trial".into());
        }
        Ok(())
    }

    /// Config as a JSON value, for embedding into artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Parses and validates a config document; blank text yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
