//! Pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::SearchConfig;
use crate::simulate::CorpusSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Minimum similarity for a column to be assigned to a row.
    pub tau_assign: f64,
    /// Minimum similarity between the assigned row and the DTW row for the
    /// column to be merged onto the DTW path.
    pub tau_merge: f64,
    /// Similarity regarded as a match by the detection templates.
    pub tau_match: f64,
    /// Shortest inner silence reported as an irregular pause, seconds.
    pub pause_min_s: f64,
    /// Half-width of the interval reported around a missing phoneme, seconds.
    pub missing_halfwidth_s: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_assign: 0.6,
            tau_merge: 0.6,
            tau_match: 0.6,
            pause_min_s: 0.25,
            missing_halfwidth_s: 0.1,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_assign", self.tau_assign),
            ("tau_merge", self.tau_merge),
            ("tau_match", self.tau_match),
            ("pause_min_s", self.pause_min_s),
            ("missing_halfwidth_s", self.missing_halfwidth_s),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.missing_halfwidth_s <= 0.0 {
            return Err(Error::InvalidArgument("missing_halfwidth_s must be > 0".into()));
        }
        Ok(())
    }
}

/// How dPER weights a substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionWeight {
    /// `max(dur_ref, dur_hyp)`
    #[default]
    Max,
    /// `(dur_ref + dur_hyp) / 2`
    HalfSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Feature table; the bundled ARPABET table when absent.
    pub inventory_path: Option<PathBuf>,
    /// Word spellings; the bundled lexicon when absent.
    pub lexicon_path: Option<PathBuf>,
    /// Serialized bigram model. Takes precedence over `lm_corpus_path`.
    pub lm_path: Option<PathBuf>,
    /// Whitespace-separated phoneme sequences, one per line, for add-k
    /// estimation. When neither LM source is given the lexicon spellings are used.
    pub lm_corpus_path: Option<PathBuf>,
    pub lm_smoothing: f64,
    pub search: SearchConfig,
    pub thresholds: Thresholds,
    pub max_order: usize,
    pub workers: usize,
    /// Corpus seed for the simulator; overrides `simulation.seed`.
    pub seed: u64,
    pub substitution_weight: SubstitutionWeight,
    pub simulation: CorpusSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inventory_path: None,
            lexicon_path: None,
            lm_path: None,
            lm_corpus_path: None,
            lm_smoothing: 1.0,
            search: SearchConfig::default(),
            thresholds: Thresholds::default(),
            max_order: 3,
            workers: 1,
            seed: 0,
            substitution_weight: SubstitutionWeight::Max,
            simulation: CorpusSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.thresholds.validate()?;
        if !(self.lm_smoothing > 0.0 && self.lm_smoothing.is_finite()) {
            return Err(Error::InvalidArgument("lm_smoothing must be > 0".into()));
        }
        self.simulation.validate()?;
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        Ok(())
    }
}
