//! Experiment harness: declarative configs, the encoding comparison grid, the
//! capacity-ratio sweep, attention analytics, and deterministic export.

pub mod arms;
pub mod config;
pub mod export;
pub mod run;

pub use arms::{arm_label, build_pe_config, strategy_context, PeArm, StrategyContext, ALL_ARMS};
pub use config::ExperimentConfig;
pub use export::{
    export_results, export_summary, read_results, write_manifest, ResultRow, ResultTable,
    RunManifest,
};
pub use run::{
    analyze_attention_run, load_and_split, run_cell, run_experiment, sweep_ratios, train_single,
    CellOutcome, LoadedData,
};
