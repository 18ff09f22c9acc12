//! Command-line harness for the positional-encoding experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use torope::data::{five_core_filter, ingest_ratings, synth_generate, write_canonical, write_id_mapping};
use torope::error::{Error, Result};
use torope::harness::{
    analyze_attention_run, export_results, read_results, run_experiment, sweep_ratios,
    train_single, ExperimentConfig, PeArm,
};
use torope::model::load_checkpoint;

#[derive(Parser)]
#[command(
    name = "torope",
    version,
    about = "Time-and-order rotary position embeddings: data, training, evaluation, and analytics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described in the config and write the
    /// canonical event file plus ground-truth labels.
    GenerateData {
        /// Experiment config (TOML) with a [dataset.synthetic] section.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for events.tsv and labels.tsv.
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Ingest a ratings CSV (userId,movieId,rating,timestamp) into the
    /// canonical tab-separated event file plus the id mapping.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        /// Apply iterated 5-core filtering before writing.
        #[arg(long)]
        five_core: bool,
    },
    /// Train one (arm, seed) cell and save its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Arm id, e.g. index-ape, time-rope, split-dim (see docs for all).
        #[arg(long)]
        arm: String,
        /// Split ratio for the split arms (defaults to the config's first).
        #[arg(long)]
        ratio: Option<f64>,
        /// Replicate seed (defaults to the config's first seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint output path.
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Train and evaluate every (arm, seed) cell of the comparison grid;
    /// writes results.csv, summary.csv, and manifest.json.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Capacity-ratio sweep over the split arms (with ratio 0/1 sentinel rows
    /// and single-source reference arms); writes sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Per-layer attention distance and entropy of a trained checkpoint;
    /// writes attention_stats.csv.
    AnalyzeAttention {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Re-export a results table in canonical order and formatting
    /// (byte-deterministic).
    Export {
        /// Existing results.csv.
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let synth = cfg.dataset.synthetic.as_ref().ok_or_else(|| {
                Error::Config("generate-data needs a [dataset.synthetic] section".into())
            })?;
            let out = synth_generate(synth)?;
            std::fs::create_dir_all(&out_dir)?;
            write_canonical(&out.dataset, &out_dir.join("events.tsv"))?;
            let mut labels = String::from("user_id\tevent\tclass\tsession\tgoverned_by\n");
            for (uid, user_labels) in out.dataset.user_ids.iter().zip(&out.labels) {
                for (e, l) in user_labels.iter().enumerate() {
                    let governed = match l.governed_by {
                        torope::data::GoverningRule::Periodic => "periodic",
                        torope::data::GoverningRule::Franchise => "franchise",
                    };
                    labels.push_str(&format!("{uid}\t{e}\t{}\t{}\t{governed}\n", l.class, l.session));
                }
            }
            std::fs::write(out_dir.join("labels.tsv"), labels)?;
            println!(
                "generated {} users, {} events -> {}",
                out.dataset.n_users(),
                out.dataset.n_events(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Ingest { input, out_dir, five_core } => {
            let ingested = ingest_ratings(&input)?;
            let dataset = if five_core {
                five_core_filter(&ingested.dataset)
            } else {
                ingested.dataset
            };
            std::fs::create_dir_all(&out_dir)?;
            write_canonical(&dataset, &out_dir.join("events.tsv"))?;
            write_id_mapping(&ingested.id_mapping, &out_dir.join("id_mapping.tsv"))?;
            println!(
                "ingested {} users, {} events (vocab {}) -> {}",
                dataset.n_users(),
                dataset.n_events(),
                dataset.vocab_size,
                out_dir.display()
            );
            Ok(())
        }
        Command::Train { config, arm, ratio, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let arm: PeArm = arm.parse()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let outcome = train_single(&cfg, arm, ratio, seed, &out)?;
            println!(
                "trained {arm} (seed {seed}): train_loss {:.6}, val_loss {:.6} -> {}",
                outcome.train_loss,
                outcome.val_loss,
                out.display()
            );
            Ok(())
        }
        Command::Evaluate { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let table = run_experiment(&cfg, &out_dir)?;
            println!("wrote {} result rows -> {}", table.rows.len(), out_dir.display());
            Ok(())
        }
        Command::Sweep { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let table = sweep_ratios(&cfg, &out_dir)?;
            println!("wrote {} sweep rows -> {}", table.rows.len(), out_dir.display());
            Ok(())
        }
        Command::AnalyzeAttention { config, checkpoint, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            if !checkpoint.exists() {
                return Err(Error::Input(format!(
                    "checkpoint {} does not exist",
                    checkpoint.display()
                )));
            }
            let state = load_checkpoint(&checkpoint)?;
            let stats = analyze_attention_run(&cfg, &state, &out_dir)?;
            for (l, (d, e)) in stats.distance.iter().zip(&stats.entropy).enumerate() {
                println!("layer {l}: distance {d:.4}, entropy {e:.4}");
            }
            if stats.sample_shortfall {
                eprintln!("warning: fewer eligible users than requested; used {}", stats.n_users);
            }
            Ok(())
        }
        Command::Export { rows, out } => {
            let table = read_results(&rows)?;
            export_results(&table, &out)?;
            println!("re-exported {} rows -> {}", table.rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
