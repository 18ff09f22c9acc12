//! Event sequences and timestamp normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A user's chronologically ordered interaction stream: item ids paired with
/// raw epoch-second timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSequence {
    item_ids: Vec<usize>,
    raw_timestamps: Vec<i64>,
}

impl EventSequence {
    /// Construct, validating that both lists have equal length, timestamps are
    /// non-decreasing, and item ids lie in `[0, vocab_size)`.
    pub fn new(item_ids: Vec<usize>, raw_timestamps: Vec<i64>, vocab_size: usize) -> Result<Self> {
        if item_ids.len() != raw_timestamps.len() {
            return Err(Error::Input(format!(
                "item/timestamp length mismatch: {} vs {}",
                item_ids.len(),
                raw_timestamps.len()
            )));
        }
        if let Some(&bad) = item_ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::Input(format!(
                "item id {bad} out of range for vocab size {vocab_size}"
            )));
        }
        if raw_timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Input(
                "timestamps must be non-decreasing; use from_unsorted to repair".into(),
            ));
        }
        Ok(EventSequence { item_ids, raw_timestamps })
    }

    /// Repair mode: stable-sort events by timestamp before constructing, so
    /// ties keep their original relative order.
    pub fn from_unsorted(
        item_ids: Vec<usize>,
        raw_timestamps: Vec<i64>,
        vocab_size: usize,
    ) -> Result<Self> {
        if item_ids.len() != raw_timestamps.len() {
            return Err(Error::Input(format!(
                "item/timestamp length mismatch: {} vs {}",
                item_ids.len(),
                raw_timestamps.len()
            )));
        }
        let mut order: Vec<usize> = (0..item_ids.len()).collect();
        order.sort_by_key(|&i| raw_timestamps[i]);
        let items = order.iter().map(|&i| item_ids[i]).collect();
        let stamps = order.iter().map(|&i| raw_timestamps[i]).collect();
        EventSequence::new(items, stamps, vocab_size)
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }

    pub fn raw_timestamps(&self) -> &[i64] {
        &self.raw_timestamps
    }

    /// Sub-sequence of the `n` most recent events (all events when `n >= len`).
    pub fn tail(&self, n: usize) -> EventSequence {
        let start = self.len().saturating_sub(n);
        EventSequence {
            item_ids: self.item_ids[start..].to_vec(),
            raw_timestamps: self.raw_timestamps[start..].to_vec(),
        }
    }

    /// Sub-sequence of the first `n` events.
    pub fn head(&self, n: usize) -> EventSequence {
        let end = n.min(self.len());
        EventSequence {
            item_ids: self.item_ids[..end].to_vec(),
            raw_timestamps: self.raw_timestamps[..end].to_vec(),
        }
    }
}

/// Maps raw epoch seconds onto the normalized time scalar
/// `τ_i = (u_i - u_ref) / s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeNormalization {
    u_ref: i64,
    s: f64,
}

/// Seconds per day, the default normalization divisor.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

impl TimeNormalization {
    pub fn new(u_ref: i64, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!("normalization divisor must be positive, got {s}")));
        }
        Ok(TimeNormalization { u_ref, s })
    }

    /// Day-unit normalization anchored at `u_ref`.
    pub fn days_from(u_ref: i64) -> Self {
        TimeNormalization { u_ref, s: SECONDS_PER_DAY }
    }

    pub fn u_ref(&self) -> i64 {
        self.u_ref
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    #[inline]
    pub fn tau(&self, u: i64) -> f64 {
        (u - self.u_ref) as f64 / self.s
    }
}

/// Normalize every raw timestamp in `seq` to a time scalar.
pub fn normalize_timestamps(seq: &EventSequence, norm: &TimeNormalization) -> Vec<f64> {
    seq.raw_timestamps().iter().map(|&u| norm.tau(u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_direct_arithmetic() {
        let seq = EventSequence::new(vec![0, 1], vec![100, 200], 10).unwrap();
        let norm = TimeNormalization::new(100, 100.0).unwrap();
        assert_eq!(normalize_timestamps(&seq, &norm), vec![0.0, 1.0]);
    }

    #[test]
    fn normalization_anchor_cancels() {
        let seq = EventSequence::new(vec![3], vec![123_456], 10).unwrap();
        for s in [1.0, 7.5, 86_400.0] {
            let norm = TimeNormalization::new(123_456, s).unwrap();
            assert_eq!(normalize_timestamps(&seq, &norm), vec![0.0]);
        }
    }

    #[test]
    fn normalization_day_units() {
        let seq = EventSequence::new(vec![0, 1], vec![86_400, 172_800], 10).unwrap();
        let norm = TimeNormalization::new(0, 86_400.0).unwrap();
        assert_eq!(normalize_timestamps(&seq, &norm), vec![1.0, 2.0]);
    }

    #[test]
    fn normalization_rejects_non_positive_divisor() {
        assert!(TimeNormalization::new(0, 0.0).is_err());
        assert!(TimeNormalization::new(0, -1.0).is_err());
    }

    #[test]
    fn pairwise_differences_shift_invariant() {
        let us = vec![1_000, 5_000, 86_400];
        let seq = EventSequence::new(vec![0, 1, 2], us.clone(), 10).unwrap();
        let norm = TimeNormalization::new(500, 3_600.0).unwrap();
        let taus = normalize_timestamps(&seq, &norm);

        let shift = 9_999_937;
        let shifted: Vec<i64> = us.iter().map(|u| u + shift).collect();
        let seq2 = EventSequence::new(vec![0, 1, 2], shifted, 10).unwrap();
        let norm2 = TimeNormalization::new(500 + shift, 3_600.0).unwrap();
        let taus2 = normalize_timestamps(&seq2, &norm2);

        for i in 0..3 {
            for j in 0..3 {
                let d1 = taus[i] - taus[j];
                let d2 = taus2[i] - taus2[j];
                assert!((d1 - d2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequence_validation() {
        assert!(EventSequence::new(vec![0, 1], vec![5], 10).is_err());
        assert!(EventSequence::new(vec![0, 12], vec![1, 2], 10).is_err());
        assert!(EventSequence::new(vec![0, 1], vec![2, 1], 10).is_err());

        let repaired = EventSequence::from_unsorted(vec![0, 1, 2], vec![30, 10, 30], 10).unwrap();
        assert_eq!(repaired.item_ids(), &[1, 0, 2]);
        assert_eq!(repaired.raw_timestamps(), &[10, 30, 30]);
    }
}
