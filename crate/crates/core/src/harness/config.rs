//! Declarative experiment configuration (TOML).
//!
//! The loader validates both syntax (with the parser's exact line/column
//! positions) and semantics (with field paths in every message).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SplitRule, SynthConfig};
use crate::error::{Error, Result};
use crate::harness::arms::PeArm;

/// Whole experiment description, as read from the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Metric cutoffs, ascending.
    pub metric_ks: Vec<usize>,
    /// Arm identifiers; see [`PeArm`] for the valid names.
    pub arms: Vec<String>,
    /// Ratios for the split arms; the comparison grid uses the first entry,
    /// the sweep runs all of them.
    #[serde(default = "default_split_ratios")]
    pub split_ratios: Vec<f64>,
    /// Exclude already-seen items from rankings (leave-one-out convention
    /// varies; default keeps them).
    #[serde(default)]
    pub filter_history: bool,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub pe: PeSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn default_split_ratios() -> Vec<f64> {
    vec![0.5]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// `synthetic` or `ratings`.
    pub kind: String,
    /// `leave-one-out` or `last-day`.
    #[serde(default = "default_split_rule")]
    pub split: String,
    /// Ratings file for `kind = "ratings"`.
    pub path: Option<PathBuf>,
    /// Apply 5-core filtering to ingested ratings.
    #[serde(default = "default_true")]
    pub five_core: bool,
    pub synthetic: Option<SynthConfig>,
}

fn default_split_rule() -> String {
    "leave-one-out".to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_max_seq_len() -> usize {
    50
}

fn default_dropout() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

fn default_batch_size() -> usize {
    128
}

fn default_learning_rate() -> f64 {
    1e-3
}

/// Frequency-bank and strategy-table settings shared by all arms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeSection {
    /// Seconds per τ-unit (86400 = day units).
    #[serde(default = "default_time_unit")]
    pub time_unit_seconds: f64,
    #[serde(default = "default_index_base")]
    pub index_bank_base: f64,
    #[serde(default)]
    pub time_bank: TimeBankSection,
    /// Train the early-fusion gates and scales.
    #[serde(default = "default_true")]
    pub early_fusion_learnable: bool,
    /// Buckets for learned time tables.
    #[serde(default = "default_time_ape_buckets")]
    pub time_ape_buckets: usize,
}

fn default_time_unit() -> f64 {
    86_400.0
}

fn default_index_base() -> f64 {
    10_000.0
}

fn default_time_ape_buckets() -> usize {
    128
}

impl Default for PeSection {
    fn default() -> Self {
        PeSection {
            time_unit_seconds: default_time_unit(),
            index_bank_base: default_index_base(),
            time_bank: TimeBankSection::default(),
            early_fusion_learnable: true,
            time_ape_buckets: default_time_ape_buckets(),
        }
    }
}

/// Time-bank construction: `base` form or `wavelength` targeted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBankSection {
    #[serde(default = "default_time_bank_kind")]
    pub kind: String,
    /// Base for `kind = "base"`.
    #[serde(default = "default_time_base")]
    pub base: f64,
    /// Shortest period in τ-units for `kind = "wavelength"`.
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    /// Longest period in τ-units for `kind = "wavelength"`.
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
}

fn default_time_bank_kind() -> String {
    "wavelength".to_string()
}

fn default_time_base() -> f64 {
    10_000.0
}

fn default_lambda_min() -> f64 {
    0.25
}

fn default_lambda_max() -> f64 {
    28.0
}

impl Default for TimeBankSection {
    fn default() -> Self {
        TimeBankSection {
            kind: default_time_bank_kind(),
            base: default_time_base(),
            lambda_min: default_lambda_min(),
            lambda_max: default_lambda_max(),
        }
    }
}

/// Attention-analytics sampling rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_sample_users")]
    pub sample_users: usize,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_sample_users() -> usize {
    100
}

fn default_min_len() -> usize {
    10
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { sample_users: default_sample_users(), min_len: default_min_len(), seed: 0 }
    }
}

impl ExperimentConfig {
    /// Parse and validate a config file; parse errors carry the TOML
    /// parser's exact positions.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: need at least one seed".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("arms: need at least one arm".into()));
        }
        for arm in &self.arms {
            arm.parse::<PeArm>()?;
        }
        if self.metric_ks.is_empty() {
            return Err(Error::Config("metric_ks: need at least one cutoff".into()));
        }
        if self.metric_ks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("metric_ks: cutoffs must be strictly ascending".into()));
        }
        if self.split_ratios.is_empty()
            || self.split_ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Config("split_ratios: values must lie in [0, 1]".into()));
        }
        match self.dataset.kind.as_str() {
            "synthetic" => {
                let synth = self.dataset.synthetic.as_ref().ok_or_else(|| {
                    Error::Config("dataset.synthetic: required when kind = \"synthetic\"".into())
                })?;
                synth.validate()?;
            }
            "ratings" => {
                if self.dataset.path.is_none() {
                    return Err(Error::Config(
                        "dataset.path: required when kind = \"ratings\"".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "dataset.kind: unknown kind {other:?}, expected \"synthetic\" or \"ratings\""
                )));
            }
        }
        self.split_rule()?;
        if self.model.d_model != self.model.n_heads * self.model.head_dim {
            return Err(Error::Config(format!(
                "model: d_model {} must equal n_heads {} * head_dim {}",
                self.model.d_model, self.model.n_heads, self.model.head_dim
            )));
        }
        if self.model.head_dim % 2 != 0 {
            return Err(Error::Config("model.head_dim: must be even".into()));
        }
        match self.pe.time_bank.kind.as_str() {
            "base" | "wavelength" => {}
            other => {
                return Err(Error::Config(format!(
                    "pe.time_bank.kind: unknown kind {other:?}, expected \"base\" or \"wavelength\""
                )));
            }
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("train: epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn parsed_arms(&self) -> Vec<PeArm> {
        self.arms.iter().map(|a| a.parse().expect("validated")).collect()
    }

    pub fn split_rule(&self) -> Result<SplitRule> {
        match self.dataset.split.as_str() {
            "leave-one-out" => Ok(SplitRule::LeaveOneOut),
            "last-day" => Ok(SplitRule::LastDay),
            other => Err(Error::Config(format!(
                "dataset.split: unknown rule {other:?}, expected \"leave-one-out\" or \"last-day\""
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
seeds = [0, 1]
metric_ks = [10, 50]
arms = ["index-ape", "time-rope", "split-dim"]

[dataset]
kind = "synthetic"

[dataset.synthetic]
n_users = 50
vocab_size = 70
n_item_classes = 10
session_rate = 0.3
session_length_range = [2, 4]
intra_session_gap_seconds_range = [30, 600]
periodic_rule = { classes_by_dow = [0, 1, 2, 3, 4, 5, 6] }
long_range_rule = { interval_days = 10.0, return_prob = 0.7 }
horizon_days = 28
start_epoch = 1600041600
seed = 7

[model]
d_model = 16
n_heads = 2
head_dim = 8
n_layers = 1

[train]
epochs = 1
"#;

    #[test]
    fn sample_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.model.max_seq_len, 50);
        assert_eq!(cfg.model.dropout, 0.2);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.pe.time_unit_seconds, 86_400.0);
        assert_eq!(cfg.split_rule().unwrap(), SplitRule::LeaveOneOut);
        assert_eq!(cfg.parsed_arms().len(), 3);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let bad = SAMPLE.replace("epochs = 1", "epochs = \"one\"");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("line"), "expected a position in: {err}");
    }

    #[test]
    fn unknown_arm_is_rejected_with_the_valid_list() {
        let bad = SAMPLE.replace("\"time-rope\"", "\"time-warp\"");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("time-warp") && err.contains("index-rope"), "got: {err}");
    }

    #[test]
    fn semantic_validation_flags_field_paths() {
        let bad = SAMPLE.replace("metric_ks = [10, 50]", "metric_ks = [50, 10]");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("metric_ks"), "got: {err}");
    }
}
