//! Closed-form diagnostic kernels for the fused angle geometry.
//!
//! These are analysis tools, not part of the forward path: they expose how a
//! plane's score contribution behaves as a function of the index gap and time
//! gap, and how the constructive and interference pathways trade off inside a
//! fused plane.

use crate::error::{Error, Result};
use crate::rope::spec::{AngleSourceSpec, Variant};

/// Per-plane relative-phase kernel `cos(Δi·ω̃^p_k + Δτ·ω̃^t_k)` for one head.
///
/// Equals the per-plane score contribution when query and key are `(1, 0)` in
/// every plane.
pub fn relative_phase_kernel_for_head(
    delta_i: i64,
    delta_tau: f64,
    spec: &AngleSourceSpec,
    head: usize,
) -> Result<Vec<f64>> {
    let eff = spec.effective_frequencies(head)?;
    let di = delta_i as f64;
    Ok(eff.iter().map(|&(wp, wt)| (di * wp + delta_tau * wt).cos()).collect())
}

/// Head-agnostic kernel; valid for every variant except `SplitByHead`.
pub fn relative_phase_kernel(
    delta_i: i64,
    delta_tau: f64,
    spec: &AngleSourceSpec,
) -> Result<Vec<f64>> {
    if spec.variant() == Variant::SplitByHead {
        return Err(Error::Input(
            "split-by-head kernels are per-head; use relative_phase_kernel_for_head".into(),
        ));
    }
    relative_phase_kernel_for_head(delta_i, delta_tau, spec, 0)
}

/// The two interaction pathways inside one fused plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceParts {
    /// `cos(a)·cos(b)` — aligned contribution.
    pub constructive: f64,
    /// `sin(a)·sin(b)` — cross term that can cancel the constructive one.
    pub interference: f64,
    /// `constructive - interference`, identically `cos(a+b)`.
    pub total: f64,
}

/// Decompose `cos(a + b)` into its constructive and interference parts, with
/// `a = Δi·ω^p_k` and `b = Δτ·ω^t_k`.
pub fn interference_decompose(a: f64, b: f64) -> InterferenceParts {
    let constructive = a.cos() * b.cos();
    let interference = a.sin() * b.sin();
    InterferenceParts { constructive, interference, total: constructive - interference }
}

/// Sensitivity of the plane kernel `cos(Δθ)` to the index gap and time gap:
/// `(-ω^p·sin(Δθ), -ω^t·sin(Δθ))`.
pub fn phase_sensitivities(delta_theta: f64, omega_p: f64, omega_t: f64) -> (f64, f64) {
    let s = delta_theta.sin();
    (-omega_p * s, -omega_t * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::bank::{FrequencyBank, SourceUnit};
    use crate::rope::spec::AngleSourceSpec;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

    #[test]
    fn kernel_zero_gap_is_one() {
        let spec = AngleSourceSpec::early_fusion_uniform(
            FrequencyBank::new(vec![1.0, 0.1], SourceUnit::IndexSteps).unwrap(),
            FrequencyBank::new(vec![2.0, 0.2], SourceUnit::TauUnits).unwrap(),
            0.3,
        )
        .unwrap();
        for c in relative_phase_kernel(0, 0.0, &spec).unwrap() {
            assert_eq!(c, 1.0);
        }
    }

    #[test]
    fn kernel_index_only_quarter_period() {
        let spec = AngleSourceSpec::index_only(
            FrequencyBank::new(vec![FRAC_PI_4], SourceUnit::IndexSteps).unwrap(),
        );
        let k = relative_phase_kernel(2, 123.0, &spec).unwrap();
        assert!(k[0].abs() < 1e-15, "cos(pi/2) expected, got {}", k[0]);
    }

    #[test]
    fn kernel_time_only_full_period() {
        let w = 0.7;
        let spec = AngleSourceSpec::time_only(
            FrequencyBank::new(vec![w], SourceUnit::TauUnits).unwrap(),
        );
        let k = relative_phase_kernel(5, TAU / w, &spec).unwrap();
        assert!((k[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_zero_angles() {
        let p = interference_decompose(0.0, 0.0);
        assert_eq!((p.constructive, p.interference, p.total), (1.0, 0.0, 1.0));
    }

    #[test]
    fn decompose_balanced_cancellation() {
        let p = interference_decompose(FRAC_PI_4, FRAC_PI_4);
        assert!((p.constructive - 0.5).abs() < 1e-15);
        assert!((p.interference - 0.5).abs() < 1e-15);
        assert!(p.total.abs() < 1e-15);
    }

    #[test]
    fn decompose_quarter_turn() {
        let p = interference_decompose(FRAC_PI_2, 0.0);
        assert!(p.constructive.abs() < 1e-15);
        assert!(p.interference.abs() < 1e-15);
        assert!(p.total.abs() < 1e-15);
    }

    #[test]
    fn sensitivities_at_stationary_points() {
        assert_eq!(phase_sensitivities(0.0, 1.0, 2.0), (0.0, 0.0));
        let (dp, dt) = phase_sensitivities(PI, 1.0, 2.0);
        assert!(dp.abs() < 1e-15);
        assert!(dt.abs() < 1e-15);
    }

    #[test]
    fn sensitivities_at_peak_slope() {
        let (dp, dt) = phase_sensitivities(FRAC_PI_2, 1.0, 2.0);
        assert!((dp + 1.0).abs() < 1e-15);
        assert!((dt + 2.0).abs() < 1e-15);
    }
}
