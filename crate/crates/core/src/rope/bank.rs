//! Per-plane frequency banks.
//!
//! A bank is a monotone (non-increasing) ladder of positive angular
//! frequencies, one per rotary plane, running from high frequency (local,
//! short-period) at plane 0 down to low frequency (long-range) at the last
//! plane. Two constructions are provided: the classic base-form ladder
//! `base^(-2k/d)` and a wavelength-targeted ladder that log-spaces between two
//! chosen periods.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What one unit of the bank's angle source means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceUnit {
    /// Discrete sequence positions: the angle source is the event index.
    IndexSteps,
    /// Normalized-time units: the angle source is the time scalar.
    TauUnits,
}

/// A ladder of per-plane angular frequencies for one angle source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBank {
    omegas: Vec<f64>,
    source_unit: SourceUnit,
}

impl FrequencyBank {
    /// Build from raw frequencies; they must be positive, finite, and
    /// non-increasing. Adjacent equal frequencies are allowed (degenerate
    /// single-period bank) but any increase is rejected.
    pub fn new(omegas: Vec<f64>, source_unit: SourceUnit) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::Config("frequency bank must have at least one plane".into()));
        }
        for (k, &w) in omegas.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!(
                    "frequency bank plane {k} has non-positive frequency {w}"
                )));
            }
        }
        if omegas.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::Config("frequency bank must be non-increasing in k".into()));
        }
        Ok(FrequencyBank { omegas, source_unit })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn source_unit(&self) -> SourceUnit {
        self.source_unit
    }

    /// True when at least two adjacent planes share a frequency, i.e. the
    /// ladder collapsed to (partially) constant. Reports flag this.
    pub fn is_degenerate(&self) -> bool {
        self.omegas.windows(2).any(|p| p[0] == p[1])
    }

    /// Effective period per plane, `2π / ω_k`, in the bank's source units.
    pub fn effective_periods(&self) -> Vec<f64> {
        self.omegas.iter().map(|&w| TAU / w).collect()
    }

    /// Re-ladder this bank onto `n` planes while keeping its frequency span.
    ///
    /// Used by the split-by-dimension allocation so each side keeps full
    /// multi-scale coverage over its own plane count. `n == len()` returns the
    /// bank unchanged (so ratio-0/1 allocations reduce exactly to the single
    /// source). `n == 0` yields an empty ladder, `n == 1` keeps the highest
    /// frequency.
    pub fn resampled(&self, n: usize) -> Vec<f64> {
        if n == self.omegas.len() {
            return self.omegas.clone();
        }
        if n == 0 {
            return Vec::new();
        }
        let w_max = self.omegas[0];
        let w_min = *self.omegas.last().unwrap();
        if n == 1 {
            return vec![w_max];
        }
        let ratio = w_min / w_max;
        let mut out: Vec<f64> = (0..n)
            .map(|k| w_max * ratio.powf(k as f64 / (n - 1) as f64))
            .collect();
        out[n - 1] = w_min;
        out
    }
}

/// Base-form ladder `ω_k = base^(-2k/d)` for `k = 0..d/2-1`.
pub fn build_base_bank(base: f64, d: usize, source_unit: SourceUnit) -> Result<FrequencyBank> {
    if !(base.is_finite() && base > 1.0) {
        return Err(Error::Config(format!("bank base must be > 1, got {base}")));
    }
    if d < 2 || d % 2 != 0 {
        return Err(Error::Config(format!("bank dimension must be even and >= 2, got {d}")));
    }
    let n = d / 2;
    let omegas = (0..n).map(|k| base.powf(-2.0 * k as f64 / d as f64)).collect();
    FrequencyBank::new(omegas, source_unit)
}

/// Wavelength-targeted ladder: log-spaced between `ω_max = 2π/λ_min` and
/// `ω_min = 2π/λ_max`, endpoints exact.
///
/// A degenerate band (`λ_min == λ_max`) is allowed and collapses to a constant
/// bank, useful for single-period probes; it is flagged via
/// [`FrequencyBank::is_degenerate`].
pub fn build_wavelength_bank(
    lambda_min: f64,
    lambda_max: f64,
    n: usize,
    source_unit: SourceUnit,
) -> Result<FrequencyBank> {
    if !(lambda_min.is_finite() && lambda_min > 0.0) {
        return Err(Error::Config(format!("lambda_min must be positive, got {lambda_min}")));
    }
    if !(lambda_max.is_finite() && lambda_max >= lambda_min) {
        return Err(Error::Config(format!(
            "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    if n == 0 {
        return Err(Error::Config("wavelength bank needs at least one plane".into()));
    }
    let w_max = TAU / lambda_min;
    let w_min = TAU / lambda_max;
    if lambda_min == lambda_max {
        return FrequencyBank::new(vec![w_max; n], source_unit);
    }
    if n == 1 {
        return Err(Error::Config(
            "a single-plane bank over a non-degenerate band is ambiguous; use N >= 2 or equal wavelengths".into(),
        ));
    }
    let ratio = w_min / w_max;
    let mut omegas: Vec<f64> = (0..n)
        .map(|k| w_max * ratio.powf(k as f64 / (n - 1) as f64))
        .collect();
    omegas[0] = w_max;
    omegas[n - 1] = w_min;
    FrequencyBank::new(omegas, source_unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn base_bank_powers_of_ten() {
        // 10000^(1/4) = 10, so the ladder is exact powers of ten.
        let bank = build_base_bank(10_000.0, 8, SourceUnit::IndexSteps).unwrap();
        assert_eq!(bank.omegas(), &[1.0, 0.1, 0.01, 0.001]);
    }

    #[test]
    fn base_bank_single_plane() {
        let bank = build_base_bank(10_000.0, 2, SourceUnit::IndexSteps).unwrap();
        assert_eq!(bank.omegas(), &[1.0]);
    }

    #[test]
    fn base_bank_base_two() {
        let bank = build_base_bank(2.0, 4, SourceUnit::IndexSteps).unwrap();
        assert_eq!(bank.omegas()[0], 1.0);
        assert_close(bank.omegas()[1], 0.707_106_781_186_547_6, 1e-15);
    }

    #[test]
    fn base_bank_rejects_bad_config() {
        assert!(build_base_bank(10_000.0, 7, SourceUnit::IndexSteps).is_err());
        assert!(build_base_bank(10_000.0, 0, SourceUnit::IndexSteps).is_err());
        assert!(build_base_bank(1.0, 8, SourceUnit::IndexSteps).is_err());
        assert!(build_base_bank(0.5, 8, SourceUnit::IndexSteps).is_err());
    }

    #[test]
    fn wavelength_bank_two_planes() {
        let bank = build_wavelength_bank(1.0, 7.0, 2, SourceUnit::TauUnits).unwrap();
        assert_eq!(bank.omegas()[0], TAU);
        assert_eq!(bank.omegas()[1], TAU / 7.0);
    }

    #[test]
    fn wavelength_bank_geometric_midpoint() {
        let bank = build_wavelength_bank(1.0, 49.0, 3, SourceUnit::TauUnits).unwrap();
        assert_eq!(bank.omegas()[0], TAU);
        assert_close(bank.omegas()[1], TAU / 7.0, 1e-12);
        assert_eq!(bank.omegas()[2], TAU / 49.0);
    }

    #[test]
    fn wavelength_bank_degenerate_band() {
        let bank = build_wavelength_bank(1.0, 1.0, 3, SourceUnit::TauUnits).unwrap();
        assert_eq!(bank.omegas(), &[TAU, TAU, TAU]);
        assert!(bank.is_degenerate());
    }

    #[test]
    fn wavelength_bank_rejects_bad_config() {
        assert!(build_wavelength_bank(7.0, 1.0, 2, SourceUnit::TauUnits).is_err());
        assert!(build_wavelength_bank(1.0, 7.0, 1, SourceUnit::TauUnits).is_err());
        assert!(build_wavelength_bank(0.0, 7.0, 2, SourceUnit::TauUnits).is_err());
    }

    #[test]
    fn effective_periods_reciprocal() {
        let bank = FrequencyBank::new(vec![TAU, TAU / 7.0], SourceUnit::TauUnits).unwrap();
        let periods = bank.effective_periods();
        assert_close(periods[0], 1.0, 1e-15);
        assert_close(periods[1], 7.0, 1e-12);

        let bank = FrequencyBank::new(vec![std::f64::consts::PI], SourceUnit::TauUnits).unwrap();
        assert_close(bank.effective_periods()[0], 2.0, 1e-15);
    }

    #[test]
    fn resample_identity_and_endpoints() {
        let bank = build_base_bank(10_000.0, 8, SourceUnit::IndexSteps).unwrap();
        assert_eq!(bank.resampled(4), bank.omegas());
        let two = bank.resampled(2);
        assert_eq!(two[0], 1.0);
        assert_eq!(two[1], 0.001);
        assert_eq!(bank.resampled(1), vec![1.0]);
        assert!(bank.resampled(0).is_empty());
    }

    #[test]
    fn rejects_increasing_ladder() {
        assert!(FrequencyBank::new(vec![0.1, 1.0], SourceUnit::IndexSteps).is_err());
        assert!(FrequencyBank::new(vec![1.0, -0.5], SourceUnit::IndexSteps).is_err());
        assert!(FrequencyBank::new(vec![], SourceUnit::IndexSteps).is_err());
    }
}
