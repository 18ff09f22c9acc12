//! Experiment orchestration: the comparison grid, the capacity-ratio sweep,
//! and attention-analytics runs.
//!
//! Arm isolation: within one run every cell shares the dataset, the split,
//! the backbone initialization (drawn from the replicate seed), and the
//! training schedule; only the positional-encoding strategy and its own
//! tables (drawn from the cell seed) differ. Cell seeds are derived from
//! (seed, arm, ratio), so adding arms never perturbs existing cells.

use std::path::Path;
use std::time::Instant;

use crate::data::{
    five_core_filter, ingest_ratings, split_dataset, synth_generate, DatasetSplit,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_stats, attention_distance, attention_entropy, AttentionStats, RankingReport,
    SamplingRule, UserStats,
};
use crate::harness::arms::{arm_label, build_pe_config, strategy_context, PeArm};
use crate::harness::config::ExperimentConfig;
use crate::harness::export::{
    export_results, export_summary, write_manifest, ResultRow, ResultTable, RunManifest,
};
use crate::model::{
    forward_loss, last_position_logits, prepare_sequence, rank_items, save_checkpoint, train,
    AdamConfig, ModelConfig, TrainConfig, TrainState,
};
use crate::rope::{EventSequence, TimeNormalization};
use crate::seeding::{derive_seed, fnv1a64, rng_from_seed};

/// Dataset after splitting, plus the normalization derived from the training
/// split.
pub struct LoadedData {
    pub split: DatasetSplit,
    pub norm: TimeNormalization,
    /// Training-split τ range (anchored at 0).
    pub tau_range: (f64, f64),
}

/// Load (or generate) the configured dataset and split it. The time anchor is
/// the earliest training-split timestamp; the divisor comes from the config.
pub fn load_and_split(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let dataset = match cfg.dataset.kind.as_str() {
        "synthetic" => {
            let synth = cfg.dataset.synthetic.as_ref().expect("validated");
            synth_generate(synth)?.dataset
        }
        _ => {
            let path = cfg.dataset.path.as_ref().expect("validated");
            let ingested = ingest_ratings(path)?;
            if cfg.dataset.five_core {
                five_core_filter(&ingested.dataset)
            } else {
                ingested.dataset
            }
        }
    };
    let split = split_dataset(&dataset, cfg.split_rule()?);
    if split.users.is_empty() {
        return Err(Error::Input(format!(
            "no users survive the split ({} dropped as too short)",
            split.dropped
        )));
    }
    let u_ref = split.earliest_train_timestamp().unwrap_or(0);
    let norm = TimeNormalization::new(u_ref, cfg.pe.time_unit_seconds)?;
    let tau_hi = split.latest_train_timestamp().map(|u| norm.tau(u)).unwrap_or(1.0).max(1e-3);
    if let Some(&max_k) = cfg.metric_ks.last() {
        if max_k > split.vocab_size {
            return Err(Error::Config(format!(
                "metric_ks: cutoff {max_k} exceeds vocabulary size {}",
                split.vocab_size
            )));
        }
    }
    Ok(LoadedData { split, norm, tau_range: (0.0, tau_hi) })
}

/// Outcome of one (arm, ratio, seed) cell.
pub struct CellOutcome {
    pub train_loss: f64,
    pub val_loss: f64,
    pub report: RankingReport,
    pub state: TrainState,
}

fn ratio_token(ratio: Option<f64>) -> String {
    ratio.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".to_string())
}

/// Cross-entropy of the single next-item target given a history.
fn target_ce(state: &TrainState, history: &EventSequence, target: usize) -> Result<f64> {
    let prepared = prepare_sequence(history, &state.config.time_norm, state.config.max_seq_len);
    let logits = last_position_logits(state, &prepared)?;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    Ok(z.ln() - (logits[target] - m))
}

/// Train and evaluate one cell on a prepared dataset.
pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    arm: PeArm,
    ratio: Option<f64>,
    seed: u64,
) -> Result<CellOutcome> {
    let ctx = strategy_context(cfg, data.tau_range);
    let pe = build_pe_config(arm, ratio.unwrap_or(0.5), &cfg.pe, &ctx)?;
    let model_cfg = ModelConfig {
        vocab_size: data.split.vocab_size,
        d_model: cfg.model.d_model,
        n_heads: cfg.model.n_heads,
        head_dim: cfg.model.head_dim,
        n_layers: cfg.model.n_layers,
        max_seq_len: cfg.model.max_seq_len,
        dropout_rate: cfg.model.dropout,
        pe,
        time_norm: data.norm,
        seed,
    };
    let pe_seed = derive_seed(seed, &format!("cell:{}@{}", arm.id(), ratio_token(ratio)));
    let mut state = TrainState::init(model_cfg, Some(pe_seed))?;

    let train_seqs: Vec<_> = data
        .split
        .users
        .iter()
        .filter(|u| u.train_len() >= 2)
        .map(|u| prepare_sequence(&u.train_seq(), &data.norm, cfg.model.max_seq_len))
        .collect();
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        adam: AdamConfig { learning_rate: cfg.train.learning_rate, ..AdamConfig::default() },
        dropout_enabled: cfg.model.dropout > 0.0,
    };
    let metrics = train(&mut state, &train_seqs, &tc)?;
    let train_loss = metrics.last().map(|m| m.mean_loss).unwrap_or(f64::NAN);

    // Validation loss: CE of the first held-out validation item.
    let mut val_sum = 0.0;
    let mut val_n = 0usize;
    for u in &data.split.users {
        if u.train_len() == 0 || u.val_len() == 0 {
            continue;
        }
        val_sum += target_ce(&state, &u.history_for_val(), u.val_items()[0])?;
        val_n += 1;
    }
    let val_loss = if val_n > 0 { val_sum / val_n as f64 } else { f64::NAN };

    // Test ranking metrics: full-vocabulary ranking of the first test item.
    let mut rankings = Vec::new();
    let mut targets = Vec::new();
    for u in &data.split.users {
        if u.history_for_test().is_empty() || u.test_len() == 0 {
            continue;
        }
        let prepared =
            prepare_sequence(&u.history_for_test(), &data.norm, cfg.model.max_seq_len);
        let logits = last_position_logits(&state, &prepared)?;
        let mut ranking = rank_items(&logits);
        if cfg.filter_history {
            let seen: std::collections::HashSet<usize> =
                u.history_for_test().item_ids().iter().copied().collect();
            ranking.retain(|i| !seen.contains(i));
        }
        rankings.push(ranking);
        targets.push(u.test_items()[0]);
    }
    let report = RankingReport::compute(&rankings, &targets, &cfg.metric_ks)?;

    Ok(CellOutcome { train_loss, val_loss, report, state })
}

fn metric_names(ks: &[usize]) -> Vec<String> {
    let mut names = vec!["train_loss".to_string(), "val_loss".to_string()];
    for &k in ks {
        names.push(format!("hr@{k}"));
    }
    for &k in ks {
        names.push(format!("ndcg@{k}"));
    }
    names
}

fn row_from_outcome(
    arm: PeArm,
    ratio: Option<f64>,
    seed: u64,
    outcome: &CellOutcome,
) -> ResultRow {
    let mut values = vec![outcome.train_loss, outcome.val_loss];
    values.extend(&outcome.report.hit_rate);
    values.extend(&outcome.report.ndcg);
    ResultRow { arm: arm.id().to_string(), ratio, seed, values }
}

fn manifest_for(cfg: &ExperimentConfig, n_rows: usize, started: Instant) -> Result<RunManifest> {
    let config_json = serde_json::to_value(cfg)
        .map_err(|e| Error::Internal(format!("config serialization failed: {e}")))?;
    let hash = fnv1a64(config_json.to_string().as_bytes());
    Ok(RunManifest {
        config_hash: format!("{hash:016x}"),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: cfg.seeds.clone(),
        arms: cfg.arms.clone(),
        metric_ks: cfg.metric_ks.clone(),
        n_rows,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        config: config_json,
    })
}

/// Train and evaluate every (arm, seed) cell on the identical data and
/// backbone; writes `results.csv`, `summary.csv`, and `manifest.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ResultTable> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let data = load_and_split(cfg)?;
    let default_ratio = cfg.split_ratios.first().copied();

    let mut table = ResultTable::new(metric_names(&cfg.metric_ks));
    for arm in cfg.parsed_arms() {
        let ratio = arm.uses_ratio().then(|| default_ratio.unwrap_or(0.5));
        for &seed in &cfg.seeds {
            let outcome = run_cell(cfg, &data, arm, ratio, seed)?;
            table.push(row_from_outcome(arm, ratio, seed, &outcome))?;
        }
    }
    table.sort_canonical();
    export_results(&table, &out_dir.join("results.csv"))?;
    export_summary(&table, &out_dir.join("summary.csv"))?;
    write_manifest(&manifest_for(cfg, table.rows.len(), started)?, &out_dir.join("manifest.json"))?;
    Ok(table)
}

/// Ratio sweep for the split arms, with ratio 0 and 1 sentinel rows plus the
/// matching single-source reference arms. Writes `sweep.csv`,
/// `sweep_summary.csv`, and `manifest.json`.
pub fn sweep_ratios(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ResultTable> {
    let started = Instant::now();
    let arms = cfg.parsed_arms();
    if let Some(bad) = arms.iter().find(|a| !a.uses_ratio()) {
        return Err(Error::Config(format!(
            "sweep arms are restricted to split-head and split-dim, got {bad}"
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let data = load_and_split(cfg)?;

    let mut ratios: Vec<f64> = Vec::with_capacity(cfg.split_ratios.len() + 2);
    ratios.push(0.0);
    ratios.extend(cfg.split_ratios.iter().copied());
    ratios.push(1.0);
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ratios.dedup();

    let mut table = ResultTable::new(metric_names(&cfg.metric_ks));
    for &arm in &arms {
        for &ratio in &ratios {
            for &seed in &cfg.seeds {
                let outcome = run_cell(cfg, &data, arm, Some(ratio), seed)?;
                table.push(row_from_outcome(arm, Some(ratio), seed, &outcome))?;
            }
        }
    }
    // Single-source references for the sentinel identities.
    for arm in [PeArm::IndexRope, PeArm::TimeRope] {
        for &seed in &cfg.seeds {
            let outcome = run_cell(cfg, &data, arm, None, seed)?;
            table.push(row_from_outcome(arm, None, seed, &outcome))?;
        }
    }
    table.sort_canonical();
    export_results(&table, &out_dir.join("sweep.csv"))?;
    export_summary(&table, &out_dir.join("sweep_summary.csv"))?;
    write_manifest(&manifest_for(cfg, table.rows.len(), started)?, &out_dir.join("manifest.json"))?;
    Ok(table)
}

/// Train one cell and save its checkpoint.
pub fn train_single(
    cfg: &ExperimentConfig,
    arm: PeArm,
    ratio: Option<f64>,
    seed: u64,
    checkpoint: &Path,
) -> Result<CellOutcome> {
    let data = load_and_split(cfg)?;
    let ratio = ratio.or_else(|| arm.uses_ratio().then(|| cfg.split_ratios[0]));
    let outcome = run_cell(cfg, &data, arm, ratio, seed)?;
    save_checkpoint(&outcome.state, checkpoint)?;
    Ok(outcome)
}

/// Per-layer attention distance and entropy of a trained checkpoint over a
/// deterministic sample of eligible users; writes plot-ready rows
/// (layer, arm, seed, distance, entropy) to `attention_stats.csv`.
pub fn analyze_attention_run(
    cfg: &ExperimentConfig,
    state: &TrainState,
    out_dir: &Path,
) -> Result<AttentionStats> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_and_split(cfg)?;
    if data.split.vocab_size > state.config.vocab_size {
        return Err(Error::Input(format!(
            "checkpoint vocabulary {} is smaller than the dataset's {}",
            state.config.vocab_size, data.split.vocab_size
        )));
    }

    // Deterministic user sample, then per-user per-layer stats.
    let eligible: Vec<&crate::data::SplitUser> = data
        .split
        .users
        .iter()
        .filter(|u| u.full().len() >= cfg.analysis.min_len)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Input(format!(
            "no users have at least {} interactions",
            cfg.analysis.min_len
        )));
    }
    let chosen: Vec<&crate::data::SplitUser> = if eligible.len() <= cfg.analysis.sample_users {
        eligible
    } else {
        use rand::seq::SliceRandom;
        let mut rng = rng_from_seed(cfg.analysis.seed);
        let mut idx: Vec<usize> = (0..eligible.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.analysis.sample_users);
        idx.sort_unstable();
        idx.into_iter().map(|i| eligible[i]).collect()
    };

    let mut per_user = Vec::with_capacity(chosen.len());
    for u in chosen {
        let prepared =
            prepare_sequence(u.full(), &state.config.time_norm, state.config.max_seq_len);
        let (_, traces) = forward_loss(state, &[prepared], true)?;
        let trace = &traces.expect("capture requested")[0];
        per_user.push(UserStats {
            user_id: u.user_id,
            n_events: u.full().len(),
            distance: attention_distance(trace)?,
            entropy: attention_entropy(trace)?,
        });
    }
    let stats = aggregate_stats(
        &per_user,
        SamplingRule {
            n_users: per_user.len(),
            min_len: 0,
            seed: cfg.analysis.seed,
        },
    )?;

    let arm = arm_label(&state.config.pe);
    let seed = state.config.seed;
    let path = out_dir.join("attention_stats.csv");
    let mut text = String::from("layer,arm,seed,distance,entropy,n_users\n");
    for (l, (d, e)) in stats.distance.iter().zip(&stats.entropy).enumerate() {
        text.push_str(&format!("{l},{arm},{seed},{d:.6},{e:.6},{}\n", stats.n_users));
    }
    std::fs::write(&path, text)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    fn small_exp() -> ExperimentConfig {
        let text = r#"
seeds = [0]
metric_ks = [5, 10]
arms = ["index-rope", "split-dim"]
split_ratios = [0.5]

[dataset]
kind = "synthetic"

[dataset.synthetic]
n_users = 40
vocab_size = 30
n_item_classes = 10
session_rate = 0.3
session_length_range = [2, 4]
intra_session_gap_seconds_range = [30, 600]
periodic_rule = { classes_by_dow = [0, 1, 2, 3, 4, 5, 6] }
horizon_days = 21
start_epoch = 1600041600
seed = 5

[model]
d_model = 16
n_heads = 2
head_dim = 8
n_layers = 1
max_seq_len = 20
dropout = 0.0

[train]
epochs = 1
batch_size = 16
"#;
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn one_arm_one_seed_gives_one_row() {
        let mut cfg = small_exp();
        cfg.arms = vec!["index-rope".into()];
        let dir = tempfile::tempdir().unwrap();
        let table = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(dir.path().join("results.csv").exists());
        assert!(dir.path().join("summary.csv").exists());
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn sweep_rejects_non_split_arms() {
        let mut cfg = small_exp();
        cfg.arms = vec!["index-rope".into()];
        let dir = tempfile::tempdir().unwrap();
        assert!(sweep_ratios(&cfg, dir.path()).is_err());
    }

    #[test]
    fn sweep_includes_sentinels_and_references() {
        let mut cfg = small_exp();
        cfg.arms = vec!["split-dim".into()];
        cfg.split_ratios = vec![0.5];
        let dir = tempfile::tempdir().unwrap();
        let table = sweep_ratios(&cfg, dir.path()).unwrap();
        // ratios {0, 0.5, 1} for split-dim plus index-rope and time-rope refs
        assert_eq!(table.rows.len(), 5);
        let ratios: Vec<Option<f64>> = table
            .rows
            .iter()
            .filter(|r| r.arm == "split-dim")
            .map(|r| r.ratio)
            .collect();
        assert_eq!(ratios, vec![Some(0.0), Some(0.5), Some(1.0)]);
    }
}
