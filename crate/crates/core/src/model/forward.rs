//! Forward pass: embeddings, pre-norm blocks, tied output head, loss, and
//! ranking.

use rand_chacha::ChaCha8Rng;

use crate::attention::{mha_forward_detailed, AttentionTrace, AttnForward, HeadParamsRef, LayerTrace, PeKind, PeStrategy};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{ModelConfig, ParamStore, PeSpec, TrainState, LN_EPS};
use crate::rope::{normalize_timestamps, AngleSourceSpec, EventSequence, TimeNormalization};

/// A sequence ready for the model: items, window-relative indices, normalized
/// times. Truncation to the most recent `max_seq_len` events happens here, at
/// batching time.
#[derive(Debug, Clone)]
pub struct PreparedSeq {
    pub items: Vec<usize>,
    pub indices: Vec<i64>,
    pub taus: Vec<f64>,
}

/// Truncate to the most recent events and normalize timestamps.
pub fn prepare_sequence(
    seq: &EventSequence,
    norm: &TimeNormalization,
    max_seq_len: usize,
) -> PreparedSeq {
    let tail = seq.tail(max_seq_len);
    PreparedSeq {
        items: tail.item_ids().to_vec(),
        indices: (0..tail.len() as i64).collect(),
        taus: normalize_timestamps(&tail, norm),
    }
}

/// Rebuilt-per-forward pieces the strategy views borrow from.
pub(crate) struct PeRuntime {
    pub spec: Option<AngleSourceSpec>,
}

/// Clone the rotary spec and, when learnable, refresh its raw gate/scale
/// parameters from the store.
pub(crate) fn pe_runtime(params: &ParamStore, cfg: &ModelConfig) -> PeRuntime {
    match &cfg.pe.primary {
        PeSpec::Rotary(spec) => {
            let mut s = spec.clone();
            if s.gates_learnable() {
                s.set_raw_params(
                    params.get("pe.rope_gates").as_slice().to_vec(),
                    params.get("pe.rope_index_scales").as_slice().to_vec(),
                    params.get("pe.rope_time_scales").as_slice().to_vec(),
                )
                .expect("learnable spec accepts refreshed raw parameters");
            }
            PeRuntime { spec: Some(s) }
        }
        _ => PeRuntime { spec: None },
    }
}

pub(crate) fn build_strategy<'a>(
    params: &'a ParamStore,
    cfg: &'a ModelConfig,
    rt: &'a PeRuntime,
) -> PeStrategy<'a> {
    let kind = match &cfg.pe.primary {
        PeSpec::Rotary(_) => PeKind::Rotary(rt.spec.as_ref().unwrap()),
        PeSpec::SinusoidalApe => PeKind::SinusoidalApe,
        PeSpec::LearnedIndexApe => PeKind::LearnedIndexApe { table: params.get("pe.index_table") },
        PeSpec::LearnedTimeApe { buckets } => {
            PeKind::LearnedTimeApe { buckets, table: params.get("pe.time_table") }
        }
        PeSpec::RelativeBias { scheme } => PeKind::RelativeBias {
            scheme,
            index_bias: params.get("pe.bias_index"),
            time_bias: params.get("pe.bias_time"),
        },
    };
    let mut strat = PeStrategy::new(kind);
    if let Some(buckets) = &cfg.pe.extra_time_ape {
        strat = strat.with_time_ape(buckets, params.get("pe.extra_time_table"));
    }
    strat
}

pub(crate) fn layer_head_refs<'a>(
    params: &'a ParamStore,
    cfg: &ModelConfig,
    layer: usize,
) -> HeadParamsRef<'a> {
    HeadParamsRef {
        w_q: (0..cfg.n_heads).map(|h| params.get(&format!("l{layer}.h{h}.wq"))).collect(),
        w_k: (0..cfg.n_heads).map(|h| params.get(&format!("l{layer}.h{h}.wk"))).collect(),
        w_v: (0..cfg.n_heads).map(|h| params.get(&format!("l{layer}.h{h}.wv"))).collect(),
        w_o: params.get(&format!("l{layer}.wo")),
    }
}

pub(crate) struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> (Mat, LnCache) {
    let (t, d) = (x.rows(), x.cols());
    let mut out = Mat::zeros(t, d);
    let mut xhat = Mat::zeros(t, d);
    let mut inv_std = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for j in 0..d {
            let xh = (row[j] - mean) * istd;
            *xhat.at_mut(i, j) = xh;
            *out.at_mut(i, j) = gamma.at(0, j) * xh + beta.at(0, j);
        }
    }
    (out, LnCache { xhat, inv_std })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub attn: AttnForward,
    pub ln2: LnCache,
    pub ln2_out: Mat,
    pub ffn_a1: Mat,
    pub ffn_g: Mat,
    pub ffn_mask: Option<Mat>,
}

pub(crate) struct SeqForward {
    pub layers: Vec<LayerCache>,
    pub final_ln: LnCache,
    pub h_final: Mat,
    /// Softmax rows for positions `0..T-1` (targets are the next items).
    pub ce_probs: Mat,
    pub loss_sum: f64,
    pub n_positions: usize,
}

/// Run one sequence through the stack, producing every cache the backward
/// pass needs. Dropout draws (attention probs then feed-forward activations,
/// layer by layer) come from `rng` when provided and the configured rate is
/// positive.
pub(crate) fn forward_seq(
    params: &ParamStore,
    cfg: &ModelConfig,
    seq: &PreparedSeq,
    mut rng: Option<&mut ChaCha8Rng>,
    rt: &PeRuntime,
) -> Result<SeqForward> {
    let t = seq.items.len();
    if t == 0 {
        return Err(Error::Input("cannot run an empty sequence".into()));
    }
    if seq.indices.len() != t || seq.taus.len() != t {
        return Err(Error::Input("prepared sequence fields disagree on length".into()));
    }
    if let Some(&bad) = seq.items.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Input(format!("item {bad} outside vocabulary")));
    }
    let d = cfg.d_model;
    let embed = params.get("embed");

    let mut h = Mat::zeros(t, d);
    for (i, &item) in seq.items.iter().enumerate() {
        h.row_mut(i).copy_from_slice(embed.row(item));
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (ln1_out, ln1) = layer_norm(
            &h,
            params.get(&format!("l{l}.ln1.gamma")),
            params.get(&format!("l{l}.ln1.beta")),
        );
        let strat = build_strategy(params, cfg, rt);
        let refs = layer_head_refs(params, cfg, l);
        let attn = mha_forward_detailed(
            &ln1_out,
            &refs,
            &strat,
            &seq.indices,
            &seq.taus,
            rng.as_deref_mut().map(|r| (cfg.dropout_rate, r)),
        )?;
        let mut h_mid = h;
        h_mid.add_assign(&attn.out);

        let (ln2_out, ln2) = layer_norm(
            &h_mid,
            params.get(&format!("l{l}.ln2.gamma")),
            params.get(&format!("l{l}.ln2.beta")),
        );
        let w1 = params.get(&format!("l{l}.ffn.w1"));
        let b1 = params.get(&format!("l{l}.ffn.b1"));
        let w2 = params.get(&format!("l{l}.ffn.w2"));
        let b2 = params.get(&format!("l{l}.ffn.b2"));
        let mut a1 = ln2_out.matmul(w1);
        for i in 0..t {
            let row = a1.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += b1.at(0, j);
            }
        }
        let g = Mat::from_fn(t, a1.cols(), |i, j| gelu(a1.at(i, j)));
        let ffn_mask = match rng.as_deref_mut() {
            Some(r) if cfg.dropout_rate > 0.0 => {
                use rand::Rng;
                let keep = 1.0 / (1.0 - cfg.dropout_rate);
                Some(Mat::from_fn(t, g.cols(), |_, _| {
                    if r.gen::<f64>() < cfg.dropout_rate {
                        0.0
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        };
        let g_used = match &ffn_mask {
            Some(m) => {
                let mut gm = g.clone();
                for (v, s) in gm.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *v *= s;
                }
                gm
            }
            None => g.clone(),
        };
        let mut ffn_out = g_used.matmul(w2);
        for i in 0..t {
            let row = ffn_out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += b2.at(0, j);
            }
        }
        let mut h_out = h_mid;
        h_out.add_assign(&ffn_out);
        h = h_out;

        layers.push(LayerCache { ln1, attn, ln2, ln2_out, ffn_a1: a1, ffn_g: g, ffn_mask });
    }

    let (h_final, final_ln) =
        layer_norm(&h, params.get("final_ln.gamma"), params.get("final_ln.beta"));

    // Tied output head: logits_t = h_final_t · E^T; loss over next-item
    // targets. Computed as ln(Σe) - (logit - max) so uniform logits give
    // exactly ln(vocab).
    let n_positions = t.saturating_sub(1);
    let mut ce_probs = Mat::zeros(n_positions, cfg.vocab_size);
    let mut loss_sum = 0.0;
    for pos in 0..n_positions {
        let hrow = h_final.row(pos);
        let prow = ce_probs.row_mut(pos);
        for v in 0..cfg.vocab_size {
            let erow = embed.row(v);
            let mut s = 0.0;
            for c in 0..d {
                s += hrow[c] * erow[c];
            }
            prow[v] = s;
        }
        let m = prow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let target_shifted = prow[seq.items[pos + 1]] - m;
        let mut z = 0.0;
        for v in prow.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in prow.iter_mut() {
            *v /= z;
        }
        loss_sum += z.ln() - target_shifted;
    }

    Ok(SeqForward { layers, final_ln, h_final, ce_probs, loss_sum, n_positions })
}

/// Mean next-item cross-entropy over a batch; deterministic given the seed
/// when dropout is disabled. Optionally captures per-sequence attention
/// traces (probabilities per layer and head).
pub fn forward_loss(
    state: &TrainState,
    batch: &[PreparedSeq],
    capture: bool,
) -> Result<(f64, Option<Vec<AttentionTrace>>)> {
    batch_loss(&state.params, &state.config, batch, capture)
}

pub(crate) fn batch_loss(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &[PreparedSeq],
    capture: bool,
) -> Result<(f64, Option<Vec<AttentionTrace>>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let rt = pe_runtime(params, cfg);
    let mut total = 0.0;
    let mut positions = 0usize;
    let mut traces = capture.then(Vec::new);
    for seq in batch {
        let fwd = forward_seq(params, cfg, seq, None, &rt)?;
        total += fwd.loss_sum;
        positions += fwd.n_positions;
        if let Some(traces) = traces.as_mut() {
            traces.push(trace_from_forward(&fwd));
        }
    }
    if positions == 0 {
        return Err(Error::Input("batch has no next-item targets (all sequences length < 2)".into()));
    }
    Ok((total / positions as f64, traces))
}

pub(crate) fn trace_from_forward(fwd: &SeqForward) -> AttentionTrace {
    AttentionTrace {
        layers: fwd
            .layers
            .iter()
            .map(|lc| LayerTrace {
                probs: lc.attn.heads.iter().map(|h| h.probs.clone()).collect(),
                logits: None,
            })
            .collect(),
    }
}

/// Logits for the next item after the final position of `seq`.
pub fn last_position_logits(state: &TrainState, seq: &PreparedSeq) -> Result<Vec<f64>> {
    let rt = pe_runtime(&state.params, &state.config);
    let fwd = forward_seq(&state.params, &state.config, seq, None, &rt)?;
    let cfg = &state.config;
    let embed = state.params.get("embed");
    let hrow = fwd.h_final.row(seq.items.len() - 1);
    let mut logits = vec![0.0; cfg.vocab_size];
    for (v, logit) in logits.iter_mut().enumerate() {
        let erow = embed.row(v);
        let mut s = 0.0;
        for c in 0..cfg.d_model {
            s += hrow[c] * erow[c];
        }
        *logit = s;
    }
    Ok(logits)
}

/// Rank item ids by descending score, breaking ties by ascending id.
pub fn rank_items(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        logits[b].partial_cmp(&logits[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order
}

/// Full-vocabulary top-k ranking at the last position. History items are not
/// filtered; see [`predict_topk_filtered`] for the filtering convention.
pub fn predict_topk(state: &TrainState, seq: &EventSequence, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > state.config.vocab_size {
        return Err(Error::Input(format!(
            "k must lie in [1, {}], got {k}",
            state.config.vocab_size
        )));
    }
    let prepared = prepare_sequence(seq, &state.config.time_norm, state.config.max_seq_len);
    let logits = last_position_logits(state, &prepared)?;
    let mut ranking = rank_items(&logits);
    ranking.truncate(k);
    Ok(ranking)
}

/// Like [`predict_topk`] but excludes items already present in the history.
pub fn predict_topk_filtered(
    state: &TrainState,
    seq: &EventSequence,
    k: usize,
) -> Result<Vec<usize>> {
    let prepared = prepare_sequence(seq, &state.config.time_norm, state.config.max_seq_len);
    let logits = last_position_logits(state, &prepared)?;
    let seen: std::collections::HashSet<usize> = seq.item_ids().iter().copied().collect();
    let mut ranking: Vec<usize> =
        rank_items(&logits).into_iter().filter(|i| !seen.contains(i)).collect();
    if k > ranking.len() {
        return Err(Error::Input(format!(
            "k = {k} exceeds the {} unseen items",
            ranking.len()
        )));
    }
    ranking.truncate(k);
    Ok(ranking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PeConfig, TrainState};
    use crate::rope::{build_base_bank, SourceUnit};

    fn tiny_state() -> TrainState {
        let pe = PeConfig::new(PeSpec::Rotary(AngleSourceSpec::index_only(
            build_base_bank(10_000.0, 8, SourceUnit::IndexSteps).unwrap(),
        )));
        let cfg = ModelConfig {
            vocab_size: 11,
            d_model: 16,
            n_heads: 2,
            head_dim: 8,
            n_layers: 2,
            max_seq_len: 8,
            dropout_rate: 0.0,
            pe,
            time_norm: TimeNormalization::days_from(0),
            seed: 5,
        };
        TrainState::init(cfg, None).unwrap()
    }

    fn seq(items: Vec<usize>) -> PreparedSeq {
        let n = items.len();
        PreparedSeq {
            items,
            indices: (0..n as i64).collect(),
            taus: (0..n).map(|i| i as f64 * 0.5).collect(),
        }
    }

    #[test]
    fn zeroed_model_gives_exact_log_vocab_loss() {
        let mut state = tiny_state();
        state.params.zero_all();
        let (loss, _) = forward_loss(&state, &[seq(vec![1, 2])], false).unwrap();
        assert_eq!(loss, (state.config.vocab_size as f64).ln());

        let (loss, _) =
            forward_loss(&state, &[seq(vec![1, 2, 3, 4]), seq(vec![5, 6])], false).unwrap();
        assert!((loss - (state.config.vocab_size as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_is_deterministic() {
        let state = tiny_state();
        let batch = vec![seq(vec![1, 2, 3, 4, 5]), seq(vec![6, 7, 8])];
        let (a, _) = forward_loss(&state, &batch, false).unwrap();
        let (b, _) = forward_loss(&state, &batch, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_rejected() {
        let state = tiny_state();
        assert!(forward_loss(&state, &[], false).is_err());
        assert!(forward_loss(&state, &[seq(vec![3])], false).is_err());
    }

    #[test]
    fn trace_capture_has_layer_structure() {
        let state = tiny_state();
        let (_, traces) = forward_loss(&state, &[seq(vec![1, 2, 3])], true).unwrap();
        let traces = traces.unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].layers.len(), 2);
        assert_eq!(traces[0].layers[0].probs.len(), 2);
        let p = &traces[0].layers[0].probs[0];
        assert_eq!(p.rows(), 3);
    }

    #[test]
    fn rank_items_breaks_ties_ascending() {
        assert_eq!(rank_items(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank_items(&[0.5, 0.5, 0.5]), vec![0, 1, 2]);
    }

    #[test]
    fn argmax_invariant_under_constant_logit_shift() {
        let logits = vec![0.3, -0.2, 0.9, 0.3];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 17.5).collect();
        assert_eq!(rank_items(&logits), rank_items(&shifted));
    }

    #[test]
    fn predict_topk_is_permutation_at_full_k() {
        let state = tiny_state();
        let events = EventSequence::new(vec![1, 2, 3], vec![10, 20, 30], 11).unwrap();
        let ranking = predict_topk(&state, &events, 11).unwrap();
        let mut sorted = ranking.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn predict_truncates_long_sequences() {
        let state = tiny_state();
        let items: Vec<usize> = (0..20).map(|i| i % 11).collect();
        let stamps: Vec<i64> = (0..20).map(|i| i * 100).collect();
        let events = EventSequence::new(items, stamps, 11).unwrap();
        // max_seq_len is 8; must not error
        let ranking = predict_topk(&state, &events, 5).unwrap();
        assert_eq!(ranking.len(), 5);
    }

    #[test]
    fn filtered_prediction_excludes_history() {
        let state = tiny_state();
        let events = EventSequence::new(vec![1, 2, 3], vec![10, 20, 30], 11).unwrap();
        let ranking = predict_topk_filtered(&state, &events, 8).unwrap();
        assert!(!ranking.contains(&1) && !ranking.contains(&2) && !ranking.contains(&3));
        assert!(predict_topk_filtered(&state, &events, 9).is_err());
    }
}
