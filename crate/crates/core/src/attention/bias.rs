//! Bucketization schemes and the additive relative-bias matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Monotone bucketization of a real-valued quantity.
///
/// `boundaries` must be strictly increasing; a scheme with `B-1` boundaries
/// has `B` buckets, and `bucket(x)` is the number of boundaries `<= x`, so
/// values below the first boundary map to bucket 0 and values at or above the
/// last boundary map to bucket `B-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBuckets {
    boundaries: Vec<f64>,
}

impl TimeBuckets {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("bucket boundaries must be finite".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bucket boundaries must be strictly increasing".into()));
        }
        Ok(TimeBuckets { boundaries })
    }

    /// Log-spaced absolute buckets over `[lo, hi]`; `lo` must be positive.
    /// Produces `n_buckets` buckets (i.e. `n_buckets - 1` boundaries).
    pub fn log_spaced(lo: f64, hi: f64, n_buckets: usize) -> Result<Self> {
        if n_buckets == 0 {
            return Err(Error::Config("need at least one bucket".into()));
        }
        if n_buckets == 1 {
            return TimeBuckets::new(Vec::new());
        }
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!(
                "log-spaced buckets need 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        let n_bounds = n_buckets - 1;
        let ratio = hi / lo;
        let boundaries = (0..n_bounds)
            .map(|i| {
                if n_bounds == 1 {
                    lo
                } else {
                    lo * ratio.powf(i as f64 / (n_bounds - 1) as f64)
                }
            })
            .collect();
        TimeBuckets::new(boundaries)
    }

    pub fn n_buckets(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Deterministic, monotone in `x`; out-of-range values clamp to the first
    /// or last bucket.
    pub fn bucket(&self, x: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= x)
    }
}

/// Bucketization of non-negative integer index distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexBuckets {
    boundaries: Vec<i64>,
}

impl IndexBuckets {
    pub fn new(boundaries: Vec<i64>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bucket boundaries must be strictly increasing".into()));
        }
        Ok(IndexBuckets { boundaries })
    }

    /// Exact buckets for distances up to `exact_max`, then log-spaced up to
    /// `max_distance`, `n_buckets` buckets in total.
    pub fn exact_then_log(exact_max: i64, max_distance: i64, n_buckets: usize) -> Result<Self> {
        let n_exact_bounds = exact_max as usize + 1; // boundaries 1..=exact_max+1
        if n_buckets < n_exact_bounds + 2 {
            return Err(Error::Config(format!(
                "need more than {n_exact_bounds} buckets for exact range {exact_max}"
            )));
        }
        if max_distance <= exact_max + 1 {
            return Err(Error::Config("max_distance must exceed the exact range".into()));
        }
        let mut boundaries: Vec<i64> = (1..=exact_max + 1).collect();
        let n_log = n_buckets - 1 - boundaries.len();
        let lo = (exact_max + 1) as f64;
        let hi = max_distance as f64;
        for i in 1..=n_log {
            let b = (lo * (hi / lo).powf(i as f64 / n_log as f64)).round() as i64;
            let prev = *boundaries.last().unwrap();
            boundaries.push(b.max(prev + 1));
        }
        IndexBuckets::new(boundaries)
    }

    pub fn n_buckets(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Bucket of a non-negative distance; negative distances are impossible
    /// for causal pairs and reported as internal errors.
    pub fn bucket(&self, delta: i64) -> Result<usize> {
        if delta < 0 {
            return Err(Error::Internal(format!(
                "negative relative distance {delta} from a causal pair"
            )));
        }
        Ok(self.boundaries.partition_point(|&b| b <= delta))
    }
}

/// Bucket schemes for the additive relative bias: one over index distances,
/// one over time gaps (in τ-units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelBiasScheme {
    pub index_buckets: IndexBuckets,
    pub time_buckets: TimeBuckets,
}

/// One minute expressed in day τ-units.
pub const MINUTE_DAYS: f64 = 1.0 / 1440.0;

impl RelBiasScheme {
    /// Default scheme: 32 index buckets (exact up to distance 8, then
    /// log-spaced to `max_context`) and 32 time-gap buckets log-spaced from
    /// one minute to 180 days, with day τ-units assumed.
    pub fn symmetric_log(max_context: usize) -> Result<Self> {
        Ok(RelBiasScheme {
            index_buckets: IndexBuckets::exact_then_log(8, max_context.max(16) as i64, 32)?,
            time_buckets: TimeBuckets::log_spaced(MINUTE_DAYS, 180.0, 32)?,
        })
    }
}

/// Additive bias matrix for one head: `bias[i][j] = b_idx[bucket(i-j)] +
/// b_time[bucket(τ_i-τ_j)]` for `j <= i`; future entries are left at zero and
/// never consumed (they are masked).
pub fn relative_bias_matrix(
    indices: &[i64],
    taus: &[f64],
    scheme: &RelBiasScheme,
    index_bias: &[f64],
    time_bias: &[f64],
) -> Result<Mat> {
    let t = indices.len();
    if taus.len() != t {
        return Err(Error::Input("indices and taus length mismatch".into()));
    }
    if index_bias.len() != scheme.index_buckets.n_buckets()
        || time_bias.len() != scheme.time_buckets.n_buckets()
    {
        return Err(Error::Input("bias table length does not match bucket scheme".into()));
    }
    let mut bias = Mat::zeros(t, t);
    for i in 0..t {
        for j in 0..=i {
            let bi = scheme.index_buckets.bucket(indices[i] - indices[j])?;
            let bt = scheme.time_buckets.bucket(taus[i] - taus[j]);
            *bias.at_mut(i, j) = index_bias[bi] + time_bias[bt];
        }
    }
    Ok(bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_bucket_boundary_enumeration() {
        let b = TimeBuckets::new(vec![0.0, 1.0, 7.0, 30.0]).unwrap();
        assert_eq!(b.n_buckets(), 5);
        assert_eq!(b.bucket(-3.0), 0); // below first boundary
        assert_eq!(b.bucket(3.0), 2);
        assert_eq!(b.bucket(1e9), 4); // above last boundary clamps to B-1
    }

    #[test]
    fn time_bucket_monotone() {
        let b = TimeBuckets::log_spaced(MINUTE_DAYS, 180.0, 32).unwrap();
        assert_eq!(b.n_buckets(), 32);
        let mut prev = 0;
        for i in 0..2000 {
            let x = -1.0 + i as f64 * 0.2;
            let cur = b.bucket(x);
            assert!(cur >= prev);
            prev = cur;
        }
        assert_eq!(b.bucket(-5.0), 0);
        assert_eq!(b.bucket(1e6), 31);
    }

    #[test]
    fn index_bucket_log_example() {
        let b = IndexBuckets::new(vec![1, 2, 4, 8]).unwrap();
        assert_eq!(b.bucket(5).unwrap(), 3);
        assert_eq!(b.bucket(0).unwrap(), 0);
        assert_eq!(b.bucket(100).unwrap(), 4);
        assert!(b.bucket(-1).is_err());
    }

    #[test]
    fn index_buckets_exact_then_log_shape() {
        let b = IndexBuckets::exact_then_log(8, 512, 32).unwrap();
        assert_eq!(b.n_buckets(), 32);
        for d in 0..=8 {
            assert_eq!(b.bucket(d).unwrap(), d as usize);
        }
        assert_eq!(b.bucket(100_000).unwrap(), 31);
    }

    #[test]
    fn bias_matrix_zero_distance_and_clamp() {
        let scheme = RelBiasScheme {
            index_buckets: IndexBuckets::new(vec![1, 2, 4, 8]).unwrap(),
            time_buckets: TimeBuckets::new(vec![0.5, 1.0]).unwrap(),
        };
        let idx_bias = [10.0, 20.0, 30.0, 40.0, 50.0];
        let t_bias = [1.0, 2.0, 3.0];
        let bias = relative_bias_matrix(
            &[0, 1, 9],
            &[0.0, 0.25, 5.0],
            &scheme,
            &idx_bias,
            &t_bias,
        )
        .unwrap();
        // i = j: both zero-distance buckets
        assert_eq!(bias.at(0, 0), 11.0);
        // gap beyond last boundary clamps to the final bucket
        assert_eq!(bias.at(2, 0), 50.0 + 3.0);
        // future entries untouched
        assert_eq!(bias.at(0, 2), 0.0);
    }
}
