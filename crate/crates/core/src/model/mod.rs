//! Toy autoregressive next-item recommender.
//!
//! Pre-norm transformer blocks over item embeddings with a tied output head.
//! All positional-encoding arms share this backbone; the only varying piece is
//! the attention-level strategy and its (optional) learnable tables. Gradients
//! are hand-written and verified against central finite differences.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod params;
mod train;

pub use adam::AdamConfig;
pub use backward::loss_and_grads;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    forward_loss, last_position_logits, prepare_sequence, rank_items, predict_topk,
    predict_topk_filtered, PreparedSeq,
};
pub use gradcheck::{check_gradients, GradCheckReport, GradCheckRow};
pub use params::{gauss, gauss_mat, Param, ParamStore};
pub use train::{train, EpochMetrics, TrainConfig};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{RelBiasScheme, TimeBuckets};
use crate::error::{Error, Result};
use crate::rope::{AngleSourceSpec, TimeNormalization};
use crate::seeding::{derive_seed, rng_from_seed};

/// Layer-norm epsilon shared by the whole backbone.
pub(crate) const LN_EPS: f64 = 1e-5;

/// Positional-encoding strategy, owned form (the attention module works with
/// borrowed views into the parameter store).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PeSpec {
    Rotary(AngleSourceSpec),
    SinusoidalApe,
    LearnedIndexApe,
    LearnedTimeApe { buckets: TimeBuckets },
    RelativeBias { scheme: RelBiasScheme },
}

/// One primary strategy plus the optional additive time-APE table used by the
/// combined "... + time APE" arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub primary: PeSpec,
    pub extra_time_ape: Option<TimeBuckets>,
}

impl PeConfig {
    pub fn new(primary: PeSpec) -> Self {
        PeConfig { primary, extra_time_ape: None }
    }

    pub fn with_extra_time_ape(mut self, buckets: TimeBuckets) -> Self {
        self.extra_time_ape = Some(buckets);
        self
    }

    /// True when the rotary gates/scales are trained.
    pub fn rotary_learnable(&self) -> bool {
        matches!(&self.primary, PeSpec::Rotary(spec) if spec.gates_learnable())
    }
}

/// Backbone and strategy configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub pe: PeConfig,
    /// Timestamp normalization applied when preparing sequences.
    pub time_norm: TimeNormalization,
    /// Seed for backbone initialization and the training schedule.
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab size must be positive".into()));
        }
        if self.d_model != self.n_heads * self.head_dim {
            return Err(Error::Config(format!(
                "d_model {} must equal n_heads {} * head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            )));
        }
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::Config(format!("head_dim must be even, got {}", self.head_dim)));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("need at least one layer".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if let PeSpec::Rotary(spec) = &self.pe.primary {
            if spec.n_planes() != self.head_dim / 2 {
                return Err(Error::Config(format!(
                    "angle source has {} planes but head_dim {} needs {}",
                    spec.n_planes(),
                    self.head_dim,
                    self.head_dim / 2
                )));
            }
            if let Some(alloc) = spec.head_allocation() {
                if alloc.n_heads() != self.n_heads {
                    return Err(Error::Config(format!(
                        "head allocation covers {} heads, model has {}",
                        alloc.n_heads(),
                        self.n_heads
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ffn_width(&self) -> usize {
        4 * self.d_model
    }
}

/// Parameters, optimizer moments, step counter, and the training RNG.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub adam_m: ParamStore,
    pub adam_v: ParamStore,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

/// Initialization scale for embeddings, projections, and learned tables.
const INIT_STD: f64 = 0.02;

impl TrainState {
    /// Initialize with the backbone drawn from `config.seed` and the
    /// strategy-specific tables drawn from `pe_seed` (defaults to a stream
    /// derived from the backbone seed). Keeping the two streams separate lets
    /// experiment arms share an identical backbone.
    pub fn init(config: ModelConfig, pe_seed: Option<u64>) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = rng_from_seed(derive_seed(config.seed, "backbone-init"));
        let d = config.d_model;
        let hd = config.head_dim;

        params.push("embed", gauss_mat(config.vocab_size, d, INIT_STD, &mut rng));
        for l in 0..config.n_layers {
            params.push(&format!("l{l}.ln1.gamma"), crate::mat::Mat::from_fn(1, d, |_, _| 1.0));
            params.push(&format!("l{l}.ln1.beta"), crate::mat::Mat::zeros(1, d));
            for h in 0..config.n_heads {
                params.push(&format!("l{l}.h{h}.wq"), gauss_mat(d, hd, INIT_STD, &mut rng));
                params.push(&format!("l{l}.h{h}.wk"), gauss_mat(d, hd, INIT_STD, &mut rng));
                params.push(&format!("l{l}.h{h}.wv"), gauss_mat(d, hd, INIT_STD, &mut rng));
            }
            params.push(
                &format!("l{l}.wo"),
                gauss_mat(config.n_heads * hd, d, INIT_STD, &mut rng),
            );
            params.push(&format!("l{l}.ln2.gamma"), crate::mat::Mat::from_fn(1, d, |_, _| 1.0));
            params.push(&format!("l{l}.ln2.beta"), crate::mat::Mat::zeros(1, d));
            params.push(&format!("l{l}.ffn.w1"), gauss_mat(d, config.ffn_width(), INIT_STD, &mut rng));
            params.push(&format!("l{l}.ffn.b1"), crate::mat::Mat::zeros(1, config.ffn_width()));
            params.push(&format!("l{l}.ffn.w2"), gauss_mat(config.ffn_width(), d, INIT_STD, &mut rng));
            params.push(&format!("l{l}.ffn.b2"), crate::mat::Mat::zeros(1, d));
        }
        params.push("final_ln.gamma", crate::mat::Mat::from_fn(1, d, |_, _| 1.0));
        params.push("final_ln.beta", crate::mat::Mat::zeros(1, d));

        // Strategy-specific tables come last, from their own stream, so the
        // backbone draw order above is identical for every arm.
        let mut pe_rng =
            rng_from_seed(pe_seed.unwrap_or_else(|| derive_seed(config.seed, "pe-init")));
        match &config.pe.primary {
            PeSpec::Rotary(spec) => {
                if spec.gates_learnable() {
                    let n = spec.n_planes();
                    params.push(
                        "pe.rope_gates",
                        crate::mat::Mat::from_vec(1, n, spec.gate_params().to_vec()),
                    );
                    params.push(
                        "pe.rope_index_scales",
                        crate::mat::Mat::from_vec(1, n, spec.index_scale_params().to_vec()),
                    );
                    params.push(
                        "pe.rope_time_scales",
                        crate::mat::Mat::from_vec(1, n, spec.time_scale_params().to_vec()),
                    );
                }
            }
            PeSpec::SinusoidalApe => {}
            PeSpec::LearnedIndexApe => {
                params.push(
                    "pe.index_table",
                    gauss_mat(config.max_seq_len, d, INIT_STD, &mut pe_rng),
                );
            }
            PeSpec::LearnedTimeApe { buckets } => {
                params.push(
                    "pe.time_table",
                    gauss_mat(buckets.n_buckets(), d, INIT_STD, &mut pe_rng),
                );
            }
            PeSpec::RelativeBias { scheme } => {
                params.push(
                    "pe.bias_index",
                    crate::mat::Mat::zeros(config.n_heads, scheme.index_buckets.n_buckets()),
                );
                params.push(
                    "pe.bias_time",
                    crate::mat::Mat::zeros(config.n_heads, scheme.time_buckets.n_buckets()),
                );
            }
        }
        if let Some(buckets) = &config.pe.extra_time_ape {
            params.push(
                "pe.extra_time_table",
                gauss_mat(buckets.n_buckets(), d, INIT_STD, &mut pe_rng),
            );
        }

        let adam_m = params.zeros_like();
        let adam_v = params.zeros_like();
        let rng = rng_from_seed(derive_seed(config.seed, "train-schedule"));
        Ok(TrainState { config, params, adam_m, adam_v, step: 0, rng })
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params.n_scalars()
    }

    /// Closed-form expected parameter count for this configuration; the
    /// rotary arms add nothing beyond learnable gates/scales.
    pub fn expected_param_count(config: &ModelConfig) -> usize {
        let d = config.d_model;
        let f = config.ffn_width();
        let backbone = config.vocab_size * d
            + config.n_layers * (2 * d + 3 * config.n_heads * d * config.head_dim
                + config.n_heads * config.head_dim * d
                + 2 * d
                + d * f + f + f * d + d)
            + 2 * d;
        let pe = match &config.pe.primary {
            PeSpec::Rotary(spec) => {
                if spec.gates_learnable() {
                    3 * spec.n_planes()
                } else {
                    0
                }
            }
            PeSpec::SinusoidalApe => 0,
            PeSpec::LearnedIndexApe => config.max_seq_len * d,
            PeSpec::LearnedTimeApe { buckets } => buckets.n_buckets() * d,
            PeSpec::RelativeBias { scheme } => {
                config.n_heads
                    * (scheme.index_buckets.n_buckets() + scheme.time_buckets.n_buckets())
            }
        };
        let extra = config
            .pe
            .extra_time_ape
            .as_ref()
            .map_or(0, |b| b.n_buckets() * d);
        backbone + pe + extra
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::{build_base_bank, SourceUnit};

    pub(crate) fn tiny_config(pe: PeConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: 37,
            d_model: 16,
            n_heads: 2,
            head_dim: 8,
            n_layers: 2,
            max_seq_len: 12,
            dropout_rate: 0.0,
            pe,
            time_norm: TimeNormalization::days_from(0),
            seed: 123,
        }
    }

    fn index_rope_pe() -> PeConfig {
        PeConfig::new(PeSpec::Rotary(AngleSourceSpec::index_only(
            build_base_bank(10_000.0, 8, SourceUnit::IndexSteps).unwrap(),
        )))
    }

    #[test]
    fn param_count_matches_formula() {
        let configs = vec![
            tiny_config(index_rope_pe()),
            tiny_config(PeConfig::new(PeSpec::LearnedIndexApe)),
            tiny_config(PeConfig::new(PeSpec::LearnedTimeApe {
                buckets: TimeBuckets::log_spaced(0.1, 100.0, 16).unwrap(),
            })),
            tiny_config(PeConfig::new(PeSpec::RelativeBias {
                scheme: RelBiasScheme::symmetric_log(64).unwrap(),
            })),
            tiny_config(
                PeConfig::new(PeSpec::LearnedIndexApe)
                    .with_extra_time_ape(TimeBuckets::log_spaced(0.1, 100.0, 16).unwrap()),
            ),
        ];
        for config in configs {
            let state = TrainState::init(config.clone(), None).unwrap();
            assert_eq!(
                state.param_count(),
                TrainState::expected_param_count(&config),
                "strategy {:?}",
                config.pe.primary
            );
        }
    }

    #[test]
    fn rotary_fixed_mode_adds_no_parameters() {
        let rope = TrainState::init(tiny_config(index_rope_pe()), None).unwrap();
        assert!(!rope.params.has("pe.rope_gates"));

        let mut sinus_cfg = tiny_config(PeConfig::new(PeSpec::SinusoidalApe));
        sinus_cfg.pe = PeConfig::new(PeSpec::SinusoidalApe);
        let sinus = TrainState::init(sinus_cfg, None).unwrap();
        assert_eq!(rope.param_count(), sinus.param_count());
    }

    #[test]
    fn learnable_gates_initialize_at_half() {
        let ibank = build_base_bank(10_000.0, 8, SourceUnit::IndexSteps).unwrap();
        let tbank = build_base_bank(100.0, 8, SourceUnit::TauUnits).unwrap();
        let spec = AngleSourceSpec::early_fusion(
            ibank,
            tbank,
            vec![0.0; 4],
            vec![crate::rope::softplus_inverse(1.0); 4],
            vec![crate::rope::softplus_inverse(1.0); 4],
            true,
        )
        .unwrap();
        let config = tiny_config(PeConfig::new(PeSpec::Rotary(spec)));
        let state = TrainState::init(config, None).unwrap();
        assert_eq!(state.params.get("pe.rope_gates").as_slice(), &[0.0; 4]);
        // raw gate 0 maps to gate 0.5 through the logistic
        assert_eq!(state.param_count() - TrainState::expected_param_count(&tiny_config(index_rope_pe())), 12);
    }

    #[test]
    fn backbone_identical_across_arms() {
        let a = TrainState::init(tiny_config(index_rope_pe()), Some(1)).unwrap();
        let b = TrainState::init(tiny_config(PeConfig::new(PeSpec::LearnedIndexApe)), Some(2))
            .unwrap();
        assert_eq!(a.params.get("embed"), b.params.get("embed"));
        assert_eq!(a.params.get("l1.ffn.w2"), b.params.get("l1.ffn.w2"));
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut c = tiny_config(index_rope_pe());
        c.d_model = 17;
        assert!(c.validate().is_err());
        let mut c = tiny_config(index_rope_pe());
        c.head_dim = 7;
        c.d_model = 14;
        assert!(c.validate().is_err());
        let mut c = tiny_config(index_rope_pe());
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
    }
}
