//! Ranking metrics and attention analytics.
//!
//! HR@k and NDCG@k follow the leave-one-out convention: a single relevant item
//! per user, so the ideal DCG is 1 and NDCG reduces to `1/log2(rank+1)`.
//! Attention distance is measured in index steps, entropy in nats; padding
//! positions never enter a trace here, so every captured row is a genuine
//! probability distribution over the causal prefix.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionTrace;
use crate::error::{Error, Result};
use crate::seeding::rng_from_seed;
use rand::seq::SliceRandom;

/// Tolerance for accepting a captured attention row as stochastic.
const ROW_SUM_TOL: f64 = 1e-9;

/// Aggregated HR/NDCG values per cutoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub ks: Vec<usize>,
    pub hit_rate: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_users: usize,
}

impl RankingReport {
    /// Compute HR@k and NDCG@k for every cutoff in `ks` (ascending).
    pub fn compute(rankings: &[Vec<usize>], targets: &[usize], ks: &[usize]) -> Result<Self> {
        let mut hr = Vec::with_capacity(ks.len());
        let mut nd = Vec::with_capacity(ks.len());
        for &k in ks {
            hr.push(hit_rate(rankings, targets, k)?);
            nd.push(ndcg(rankings, targets, k)?);
        }
        Ok(RankingReport { ks: ks.to_vec(), hit_rate: hr, ndcg: nd, n_users: rankings.len() })
    }
}

fn target_rank(ranking: &[usize], target: usize) -> Option<usize> {
    ranking.iter().position(|&item| item == target).map(|p| p + 1)
}

/// Fraction of users whose held-out target appears in the top `k`.
pub fn hit_rate(rankings: &[Vec<usize>], targets: &[usize], k: usize) -> Result<f64> {
    validate_metric_inputs(rankings, targets, k)?;
    let hits = rankings
        .iter()
        .zip(targets)
        .filter(|(r, &t)| matches!(target_rank(r, t), Some(rank) if rank <= k))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Mean over users of `1/log2(rank+1)` when the target ranks within `k`, else 0.
pub fn ndcg(rankings: &[Vec<usize>], targets: &[usize], k: usize) -> Result<f64> {
    validate_metric_inputs(rankings, targets, k)?;
    let total: f64 = rankings
        .iter()
        .zip(targets)
        .map(|(r, &t)| match target_rank(r, t) {
            Some(rank) if rank <= k => 1.0 / ((rank as f64) + 1.0).log2(),
            _ => 0.0,
        })
        .sum();
    Ok(total / rankings.len() as f64)
}

fn validate_metric_inputs(rankings: &[Vec<usize>], targets: &[usize], k: usize) -> Result<()> {
    if rankings.is_empty() || rankings.len() != targets.len() {
        return Err(Error::Input(format!(
            "need equal non-zero ranking/target counts, got {} vs {}",
            rankings.len(),
            targets.len()
        )));
    }
    if k == 0 {
        return Err(Error::Input("metric cutoff k must be positive".into()));
    }
    if let Some(short) = rankings.iter().find(|r| r.len() < k) {
        return Err(Error::Input(format!(
            "ranking of length {} is shorter than k = {k}",
            short.len()
        )));
    }
    Ok(())
}

/// Per-layer attention statistics averaged over queries, heads, and (after
/// [`aggregate_stats`]) users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    /// Mean probability-weighted |i-j| per layer, in index steps.
    pub distance: Vec<f64>,
    /// Mean Shannon entropy per layer, in nats.
    pub entropy: Vec<f64>,
    /// Users aggregated into the means.
    pub n_users: usize,
    /// Set when fewer eligible users than requested were available.
    pub sample_shortfall: bool,
}

fn validate_rows(trace: &AttentionTrace) -> Result<()> {
    for (l, layer) in trace.layers.iter().enumerate() {
        for (h, probs) in layer.probs.iter().enumerate() {
            let t = probs.rows();
            if probs.cols() != t {
                return Err(Error::Input(format!(
                    "layer {l} head {h}: probability matrix is not square"
                )));
            }
            for i in 0..t {
                let row = probs.row(i);
                let sum: f64 = row[..=i].iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::Input(format!(
                        "layer {l} head {h} row {i}: probabilities sum to {sum}, not 1"
                    )));
                }
                if row[i + 1..].iter().any(|&p| p != 0.0) {
                    return Err(Error::Input(format!(
                        "layer {l} head {h} row {i}: masked entry is non-zero"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Probability-weighted query–key distance `Σ_j p[i][j]·|i-j|`, averaged over
/// queries and heads, reported per layer.
pub fn attention_distance(trace: &AttentionTrace) -> Result<Vec<f64>> {
    validate_rows(trace)?;
    trace
        .layers
        .iter()
        .map(|layer| {
            let mut total = 0.0;
            let mut count = 0usize;
            for probs in &layer.probs {
                let t = probs.rows();
                for i in 0..t {
                    let row = probs.row(i);
                    let mut dist = 0.0;
                    for (j, &p) in row[..=i].iter().enumerate() {
                        dist += p * (i - j) as f64;
                    }
                    total += dist;
                    count += 1;
                }
            }
            Ok(total / count as f64)
        })
        .collect()
}

/// Shannon entropy `-Σ_j p·ln p` over unmasked keys (with `0·ln 0 = 0`),
/// averaged over queries and heads, reported per layer.
pub fn attention_entropy(trace: &AttentionTrace) -> Result<Vec<f64>> {
    validate_rows(trace)?;
    trace
        .layers
        .iter()
        .map(|layer| {
            let mut total = 0.0;
            let mut count = 0usize;
            for probs in &layer.probs {
                let t = probs.rows();
                for i in 0..t {
                    let row = probs.row(i);
                    let mut ent = 0.0;
                    for &p in &row[..=i] {
                        if p > 0.0 {
                            ent -= p * p.ln();
                        }
                    }
                    total += ent;
                    count += 1;
                }
            }
            Ok(total / count as f64)
        })
        .collect()
}

/// Per-user input to [`aggregate_stats`].
#[derive(Debug, Clone)]
pub struct UserStats {
    pub user_id: u64,
    /// Interaction count used for the eligibility threshold.
    pub n_events: usize,
    pub distance: Vec<f64>,
    pub entropy: Vec<f64>,
}

/// Sampling rule for user-level aggregation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingRule {
    pub n_users: usize,
    pub min_len: usize,
    pub seed: u64,
}

/// Deterministically sample eligible users and average their per-layer stats.
/// When fewer users are eligible than requested, all of them are used and the
/// shortfall is flagged.
pub fn aggregate_stats(per_user: &[UserStats], rule: SamplingRule) -> Result<AttentionStats> {
    let eligible: Vec<&UserStats> =
        per_user.iter().filter(|u| u.n_events >= rule.min_len).collect();
    if eligible.is_empty() {
        return Err(Error::Input("no users meet the sampling minimum length".into()));
    }
    let n_layers = eligible[0].distance.len();
    if eligible.iter().any(|u| u.distance.len() != n_layers || u.entropy.len() != n_layers) {
        return Err(Error::Input("per-user stats disagree on layer count".into()));
    }

    let shortfall = eligible.len() < rule.n_users;
    let chosen: Vec<&UserStats> = if shortfall {
        eligible
    } else {
        let mut rng = rng_from_seed(rule.seed);
        let mut idx: Vec<usize> = (0..eligible.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(rule.n_users);
        idx.sort_unstable(); // fixed reduction order
        idx.into_iter().map(|i| eligible[i]).collect()
    };

    let mut distance = vec![0.0; n_layers];
    let mut entropy = vec![0.0; n_layers];
    for u in &chosen {
        for l in 0..n_layers {
            distance[l] += u.distance[l];
            entropy[l] += u.entropy[l];
        }
    }
    let n = chosen.len() as f64;
    distance.iter_mut().for_each(|v| *v /= n);
    entropy.iter_mut().for_each(|v| *v /= n);

    Ok(AttentionStats { distance, entropy, n_users: chosen.len(), sample_shortfall: shortfall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::LayerTrace;
    use crate::mat::Mat;

    fn trace_from_rows(rows: Vec<Vec<f64>>) -> AttentionTrace {
        let t = rows.len();
        let mut m = Mat::zeros(t, t);
        for (i, r) in rows.iter().enumerate() {
            for (j, &p) in r.iter().enumerate() {
                *m.at_mut(i, j) = p;
            }
        }
        AttentionTrace { layers: vec![LayerTrace { probs: vec![m], logits: None }] }
    }

    #[test]
    fn hit_rate_examples() {
        // target at rank 1 for user 0, rank 11 for user 1
        let r0: Vec<usize> = (0..20).collect();
        let r1: Vec<usize> = (1..=20).chain([0]).collect();
        let rankings = vec![r0, r1];
        let targets = vec![0, 0];
        assert_eq!(hit_rate(&rankings[..1].to_vec(), &targets[..1], 10).unwrap(), 1.0);
        assert_eq!(hit_rate(&rankings[1..].to_vec(), &targets[1..], 10).unwrap(), 0.0);
        assert_eq!(hit_rate(&rankings, &targets, 10).unwrap(), 0.5);
    }

    #[test]
    fn ndcg_examples() {
        let rankings = vec![vec![5, 9, 2]];
        assert_eq!(ndcg(&rankings, &[5], 3).unwrap(), 1.0);
        let v = ndcg(&rankings, &[9], 3).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12, "rank 2 => 0.63093, got {v}");
        assert_eq!(ndcg(&rankings, &[7], 3).unwrap(), 0.0);
    }

    #[test]
    fn metrics_reject_short_rankings() {
        let rankings = vec![vec![1, 2]];
        assert!(hit_rate(&rankings, &[1], 3).is_err());
        assert!(ndcg(&rankings, &[1], 3).is_err());
    }

    #[test]
    fn metric_monotone_in_k() {
        let rankings = vec![vec![3, 1, 4, 0, 2], vec![0, 1, 2, 3, 4]];
        let targets = vec![4, 4];
        let mut prev_hr = 0.0;
        let mut prev_nd = 0.0;
        for k in 1..=5 {
            let hr = hit_rate(&rankings, &targets, k).unwrap();
            let nd = ndcg(&rankings, &targets, k).unwrap();
            assert!(hr >= prev_hr && nd >= prev_nd);
            prev_hr = hr;
            prev_nd = nd;
        }
    }

    #[test]
    fn distance_hand_values() {
        let trace = trace_from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ]);
        let d = attention_distance(&trace).unwrap();
        // rows contribute 0, 1, and (2+1+0)/3 = 1 => mean 2/3
        assert!((d[0] - (0.0 + 1.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_hand_values() {
        let one_hot = trace_from_rows(vec![vec![1.0]]);
        assert_eq!(attention_entropy(&one_hot).unwrap()[0], 0.0);

        let two_uniform = trace_from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        let e = attention_entropy(&two_uniform).unwrap()[0];
        assert!((e - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_stochastic_rows_rejected() {
        let trace = trace_from_rows(vec![vec![0.9]]);
        assert!(attention_distance(&trace).is_err());
        let trace = trace_from_rows(vec![vec![1.0, 0.2], vec![0.5, 0.5]]);
        assert!(attention_entropy(&trace).is_err());
    }

    #[test]
    fn aggregate_means_and_shortfall() {
        let users = vec![
            UserStats { user_id: 1, n_events: 10, distance: vec![1.0], entropy: vec![0.2] },
            UserStats { user_id: 2, n_events: 10, distance: vec![3.0], entropy: vec![0.4] },
            UserStats { user_id: 3, n_events: 2, distance: vec![9.0], entropy: vec![9.0] },
        ];
        let stats =
            aggregate_stats(&users, SamplingRule { n_users: 5, min_len: 5, seed: 1 }).unwrap();
        assert_eq!(stats.n_users, 2);
        assert!(stats.sample_shortfall);
        assert!((stats.distance[0] - 2.0).abs() < 1e-12);
        assert!((stats.entropy[0] - 0.3).abs() < 1e-12);

        let one = aggregate_stats(&users[..1], SamplingRule { n_users: 1, min_len: 5, seed: 1 })
            .unwrap();
        assert_eq!(one.distance, vec![1.0]);
        assert!(!one.sample_shortfall);
    }

    #[test]
    fn aggregate_is_seed_deterministic() {
        let users: Vec<UserStats> = (0..20)
            .map(|i| UserStats {
                user_id: i,
                n_events: 10,
                distance: vec![i as f64],
                entropy: vec![i as f64 / 10.0],
            })
            .collect();
        let rule = SamplingRule { n_users: 5, min_len: 1, seed: 42 };
        let a = aggregate_stats(&users, rule).unwrap();
        let b = aggregate_stats(&users, rule).unwrap();
        assert_eq!(a, b);
    }
}
