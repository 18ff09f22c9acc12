//! Train/validation/test splitting.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rope::EventSequence;

/// How the per-user split boundaries were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Final event is test, second-to-last is validation.
    LeaveOneOut,
    /// All final-day events are test, second-to-last-day events validation.
    LastDay,
}

/// One retained user's events with split boundaries: train is
/// `[0, train_end)`, validation `[train_end, val_end)`, test `[val_end, len)`.
#[derive(Debug, Clone)]
pub struct SplitUser {
    pub user_id: u64,
    seq: EventSequence,
    train_end: usize,
    val_end: usize,
}

impl SplitUser {
    pub fn full(&self) -> &EventSequence {
        &self.seq
    }

    pub fn train_len(&self) -> usize {
        self.train_end
    }

    pub fn val_len(&self) -> usize {
        self.val_end - self.train_end
    }

    pub fn test_len(&self) -> usize {
        self.seq.len() - self.val_end
    }

    /// Training prefix.
    pub fn train_seq(&self) -> EventSequence {
        self.seq.head(self.train_end)
    }

    /// Events visible when predicting the first validation target.
    pub fn history_for_val(&self) -> EventSequence {
        self.seq.head(self.train_end)
    }

    /// Events visible when predicting the first test target.
    pub fn history_for_test(&self) -> EventSequence {
        self.seq.head(self.val_end)
    }

    pub fn val_items(&self) -> &[usize] {
        &self.seq.item_ids()[self.train_end..self.val_end]
    }

    pub fn test_items(&self) -> &[usize] {
        &self.seq.item_ids()[self.val_end..]
    }
}

/// A completed split with the drop count for too-short users.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub users: Vec<SplitUser>,
    pub dropped: usize,
    pub rule: SplitRule,
    pub vocab_size: usize,
}

impl DatasetSplit {
    /// Earliest training-split timestamp, the default normalization anchor.
    pub fn earliest_train_timestamp(&self) -> Option<i64> {
        self.users
            .iter()
            .filter(|u| u.train_len() > 0)
            .map(|u| u.seq.raw_timestamps()[0])
            .min()
    }

    /// Latest training-split timestamp (upper edge for absolute-time buckets).
    pub fn latest_train_timestamp(&self) -> Option<i64> {
        self.users
            .iter()
            .filter(|u| u.train_len() > 0)
            .map(|u| u.seq.raw_timestamps()[u.train_len() - 1])
            .max()
    }
}

/// Leave-one-out: last event to test, second-to-last to validation, remainder
/// to train. Users with fewer than 3 events are dropped and counted.
pub fn split_leave_one_out(dataset: &Dataset) -> DatasetSplit {
    let mut users = Vec::new();
    let mut dropped = 0usize;
    for (uid, seq) in dataset.user_ids.iter().zip(&dataset.sequences) {
        let n = seq.len();
        if n < 3 {
            dropped += 1;
            continue;
        }
        users.push(SplitUser {
            user_id: *uid,
            seq: seq.clone(),
            train_end: n - 2,
            val_end: n - 1,
        });
    }
    DatasetSplit { users, dropped, rule: SplitRule::LeaveOneOut, vocab_size: dataset.vocab_size }
}

/// Day-based split: events on the user's last active UTC day go to test,
/// events on the second-to-last active day to validation, the rest to train.
/// Users with fewer than 3 distinct active days are dropped and counted.
pub fn split_last_day(dataset: &Dataset) -> DatasetSplit {
    let mut users = Vec::new();
    let mut dropped = 0usize;
    for (uid, seq) in dataset.user_ids.iter().zip(&dataset.sequences) {
        let days: Vec<i64> = seq.raw_timestamps().iter().map(|&u| u.div_euclid(86_400)).collect();
        let mut distinct = days.clone();
        distinct.dedup();
        if distinct.len() < 3 {
            dropped += 1;
            continue;
        }
        let last = *distinct.last().unwrap();
        let second_last = distinct[distinct.len() - 2];
        let val_end = days.iter().position(|&d| d == last).unwrap();
        let train_end = days.iter().position(|&d| d == second_last).unwrap();
        users.push(SplitUser { user_id: *uid, seq: seq.clone(), train_end, val_end });
    }
    DatasetSplit { users, dropped, rule: SplitRule::LastDay, vocab_size: dataset.vocab_size }
}

/// Dispatch on the rule tag.
pub fn split_dataset(dataset: &Dataset, rule: SplitRule) -> DatasetSplit {
    match rule {
        SplitRule::LeaveOneOut => split_leave_one_out(dataset),
        SplitRule::LastDay => split_last_day(dataset),
    }
}
