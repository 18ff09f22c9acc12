//! Adam with bias correction, operating over the named parameter store.

use serde::{Deserialize, Serialize};

use crate::model::{ParamStore, TrainState};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One update step; increments the state's step counter.
pub fn adam_step(state: &mut TrainState, grads: &ParamStore, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((p, m), v) in state
        .params
        .iter_mut()
        .zip(state.adam_m.iter_mut())
        .zip(state.adam_v.iter_mut())
    {
        debug_assert_eq!(p.name, m.name);
        let g = grads.get(&p.name);
        let pv = p.value.as_mut_slice();
        let mv = m.value.as_mut_slice();
        let vv = v.value.as_mut_slice();
        for i in 0..pv.len() {
            let gi = g.as_slice()[i];
            mv[i] = cfg.beta1 * mv[i] + (1.0 - cfg.beta1) * gi;
            vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = mv[i] / bc1;
            let vhat = vv[i] / bc2;
            pv[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, the very first step is lr * g/|g| (for eps ~ 0).
        let mut params = ParamStore::new();
        params.push("w", Mat::from_vec(1, 2, vec![1.0, -2.0]));
        let mut state = TrainState {
            config: dummy_config(),
            adam_m: params.zeros_like(),
            adam_v: params.zeros_like(),
            params,
            step: 0,
            rng: crate::seeding::rng_from_seed(0),
        };
        let mut grads = state.params.zeros_like();
        *grads.get_mut("w").at_mut(0, 0) = 0.5;
        *grads.get_mut("w").at_mut(0, 1) = -3.0;
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        adam_step(&mut state, &grads, &cfg);
        let w = state.params.get("w");
        assert!((w.at(0, 0) - (1.0 - 0.1)).abs() < 1e-6);
        assert!((w.at(0, 1) - (-2.0 + 0.1)).abs() < 1e-6);
        assert_eq!(state.step, 1);
    }

    fn dummy_config() -> crate::model::ModelConfig {
        use crate::model::{PeConfig, PeSpec};
        use crate::rope::{build_base_bank, AngleSourceSpec, SourceUnit, TimeNormalization};
        crate::model::ModelConfig {
            vocab_size: 2,
            d_model: 2,
            n_heads: 1,
            head_dim: 2,
            n_layers: 1,
            max_seq_len: 2,
            dropout_rate: 0.0,
            pe: PeConfig::new(PeSpec::Rotary(AngleSourceSpec::index_only(
                build_base_bank(10_000.0, 2, SourceUnit::IndexSteps).unwrap(),
            ))),
            time_norm: TimeNormalization::days_from(0),
            seed: 0,
        }
    }
}
