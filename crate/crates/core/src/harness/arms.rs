//! Experiment arms: the positional-encoding variants under comparison.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{RelBiasScheme, TimeBuckets};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, PeSection};
use crate::model::{PeConfig, PeSpec};
use crate::rope::{
    build_base_bank, build_wavelength_bank, softplus_inverse, AngleSourceSpec, FrequencyBank,
    SourceUnit,
};

/// One comparison-grid arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeArm {
    IndexApe,
    IndexApeTimeApe,
    RelativeBias,
    IndexRope,
    TimeRope,
    IndexRopeTimeApe,
    EarlyFusion,
    SplitHead,
    SplitDim,
}

pub const ALL_ARMS: [PeArm; 9] = [
    PeArm::IndexApe,
    PeArm::IndexApeTimeApe,
    PeArm::RelativeBias,
    PeArm::IndexRope,
    PeArm::TimeRope,
    PeArm::IndexRopeTimeApe,
    PeArm::EarlyFusion,
    PeArm::SplitHead,
    PeArm::SplitDim,
];

impl PeArm {
    pub fn id(&self) -> &'static str {
        match self {
            PeArm::IndexApe => "index-ape",
            PeArm::IndexApeTimeApe => "index-ape+time-ape",
            PeArm::RelativeBias => "relative-bias",
            PeArm::IndexRope => "index-rope",
            PeArm::TimeRope => "time-rope",
            PeArm::IndexRopeTimeApe => "index-rope+time-ape",
            PeArm::EarlyFusion => "early-fusion",
            PeArm::SplitHead => "split-head",
            PeArm::SplitDim => "split-dim",
        }
    }

    pub fn uses_ratio(&self) -> bool {
        matches!(self, PeArm::SplitHead | PeArm::SplitDim)
    }
}

impl fmt::Display for PeArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PeArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        for arm in ALL_ARMS {
            if arm.id() == s {
                return Ok(arm);
            }
        }
        let valid: Vec<&str> = ALL_ARMS.iter().map(|a| a.id()).collect();
        Err(Error::Config(format!("unknown arm {s:?}; valid arms: {}", valid.join(", "))))
    }
}

/// Data-dependent inputs the strategy tables need.
#[derive(Debug, Clone, Copy)]
pub struct StrategyContext {
    pub head_dim: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Smallest and largest training-split τ (for absolute time buckets).
    pub tau_range: (f64, f64),
}

fn index_bank(pe: &PeSection, head_dim: usize) -> Result<FrequencyBank> {
    build_base_bank(pe.index_bank_base, head_dim, SourceUnit::IndexSteps)
}

fn time_bank(pe: &PeSection, head_dim: usize) -> Result<FrequencyBank> {
    match pe.time_bank.kind.as_str() {
        "base" => build_base_bank(pe.time_bank.base, head_dim, SourceUnit::TauUnits),
        _ => build_wavelength_bank(
            pe.time_bank.lambda_min,
            pe.time_bank.lambda_max,
            head_dim / 2,
            SourceUnit::TauUnits,
        ),
    }
}

fn absolute_time_buckets(pe: &PeSection, ctx: &StrategyContext) -> Result<TimeBuckets> {
    let lo = ctx.tau_range.0.max(1e-3);
    let hi = ctx.tau_range.1.max(lo * 2.0);
    TimeBuckets::log_spaced(lo, hi, pe.time_ape_buckets)
}

/// Build the owned strategy configuration for one arm. `ratio` applies to the
/// split arms only.
pub fn build_pe_config(
    arm: PeArm,
    ratio: f64,
    pe: &PeSection,
    ctx: &StrategyContext,
) -> Result<PeConfig> {
    let n = ctx.head_dim / 2;
    let cfg = match arm {
        PeArm::IndexApe => PeConfig::new(PeSpec::LearnedIndexApe),
        PeArm::IndexApeTimeApe => PeConfig::new(PeSpec::LearnedIndexApe)
            .with_extra_time_ape(absolute_time_buckets(pe, ctx)?),
        PeArm::RelativeBias => PeConfig::new(PeSpec::RelativeBias {
            scheme: RelBiasScheme::symmetric_log(ctx.max_seq_len)?,
        }),
        PeArm::IndexRope => PeConfig::new(PeSpec::Rotary(AngleSourceSpec::index_only(
            index_bank(pe, ctx.head_dim)?,
        ))),
        PeArm::TimeRope => PeConfig::new(PeSpec::Rotary(AngleSourceSpec::time_only(time_bank(
            pe,
            ctx.head_dim,
        )?))),
        PeArm::IndexRopeTimeApe => PeConfig::new(PeSpec::Rotary(AngleSourceSpec::index_only(
            index_bank(pe, ctx.head_dim)?,
        )))
        .with_extra_time_ape(absolute_time_buckets(pe, ctx)?),
        PeArm::EarlyFusion => {
            let spec = if pe.early_fusion_learnable {
                // Gates start at λ = 0.5 (raw 0), scales at α = 1.
                AngleSourceSpec::early_fusion(
                    index_bank(pe, ctx.head_dim)?,
                    time_bank(pe, ctx.head_dim)?,
                    vec![0.0; n],
                    vec![softplus_inverse(1.0); n],
                    vec![softplus_inverse(1.0); n],
                    true,
                )?
            } else {
                AngleSourceSpec::early_fusion_uniform(
                    index_bank(pe, ctx.head_dim)?,
                    time_bank(pe, ctx.head_dim)?,
                    0.5,
                )?
            };
            PeConfig::new(PeSpec::Rotary(spec))
        }
        PeArm::SplitHead => PeConfig::new(PeSpec::Rotary(AngleSourceSpec::split_by_head(
            index_bank(pe, ctx.head_dim)?,
            time_bank(pe, ctx.head_dim)?,
            ratio,
            ctx.n_heads,
        )?)),
        PeArm::SplitDim => PeConfig::new(PeSpec::Rotary(AngleSourceSpec::split_by_dim(
            index_bank(pe, ctx.head_dim)?,
            time_bank(pe, ctx.head_dim)?,
            ratio,
        )?)),
    };
    Ok(cfg)
}

/// Stable label for a strategy configuration, used when a checkpoint is the
/// only thing in hand.
pub fn arm_label(pe: &PeConfig) -> String {
    let base = match &pe.primary {
        PeSpec::Rotary(spec) => match spec.variant() {
            crate::rope::Variant::IndexOnly => "index-rope",
            crate::rope::Variant::TimeOnly => "time-rope",
            crate::rope::Variant::EarlyFusion => "early-fusion",
            crate::rope::Variant::SplitByDim => "split-dim",
            crate::rope::Variant::SplitByHead => "split-head",
        },
        PeSpec::SinusoidalApe => "sinusoidal-ape",
        PeSpec::LearnedIndexApe => "index-ape",
        PeSpec::LearnedTimeApe { .. } => "time-ape",
        PeSpec::RelativeBias { .. } => "relative-bias",
    };
    if pe.extra_time_ape.is_some() {
        format!("{base}+time-ape")
    } else {
        base.to_string()
    }
}

/// Strategy context derived from a validated experiment config and the
/// training split's τ range.
pub fn strategy_context(cfg: &ExperimentConfig, tau_range: (f64, f64)) -> StrategyContext {
    StrategyContext {
        head_dim: cfg.model.head_dim,
        n_heads: cfg.model.n_heads,
        max_seq_len: cfg.model.max_seq_len,
        tau_range,
    }
}
