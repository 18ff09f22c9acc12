//! Synthetic data generation, ratings ingestion, core filtering, and
//! train/validation/test splitting.

mod filter;
mod movielens;
mod split;
pub mod synth;

pub use filter::{five_core_filter, k_core_filter};
pub use movielens::{ingest_ratings, read_canonical, write_canonical, write_id_mapping, IngestResult};
pub use split::{split_dataset, split_last_day, split_leave_one_out, DatasetSplit, SplitRule, SplitUser};
pub use synth::{
    day_of_week, synth_generate, EventLabel, GoverningRule, LongRangeRule, PeriodicRule,
    SynthConfig, SynthOutput,
};

use crate::rope::EventSequence;

/// A population of user event streams over one item vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub user_ids: Vec<u64>,
    pub sequences: Vec<EventSequence>,
    pub vocab_size: usize,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}
