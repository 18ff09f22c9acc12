//! Angle tables and pairwise plane rotation.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rope::spec::{AngleSourceSpec, Variant};

/// Per-position, per-plane rotation angles for one head: a `T × N` table.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryAngles {
    t: usize,
    n: usize,
    angles: Vec<f64>,
}

impl RotaryAngles {
    pub fn new(t: usize, n: usize, angles: Vec<f64>) -> Result<Self> {
        if angles.len() != t * n {
            return Err(Error::Input(format!(
                "angle table length {} does not match {t}x{n}",
                angles.len()
            )));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("angle table contains non-finite values".into()));
        }
        Ok(RotaryAngles { t, n, angles })
    }

    pub fn seq_len(&self) -> usize {
        self.t
    }

    pub fn n_planes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, k: usize) -> f64 {
        debug_assert!(i < self.t && k < self.n);
        self.angles[i * self.n + k]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.angles[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.angles
    }
}

/// Compute the fused angle table for one head:
/// `θ_{i,k} = ω̃^p_k · index_i + ω̃^t_k · τ_i`.
pub fn compute_angles_for_head(
    indices: &[i64],
    taus: &[f64],
    spec: &AngleSourceSpec,
    head: usize,
) -> Result<RotaryAngles> {
    if indices.len() != taus.len() {
        return Err(Error::Input(format!(
            "indices and taus length mismatch: {} vs {}",
            indices.len(),
            taus.len()
        )));
    }
    if taus.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("taus contain non-finite values".into()));
    }
    let eff = spec.effective_frequencies(head)?;
    let n = eff.len();
    let t = indices.len();
    let mut angles = Vec::with_capacity(t * n);
    for (&i, &tau) in indices.iter().zip(taus) {
        let pos = i as f64;
        for &(wp, wt) in &eff {
            angles.push(wp * pos + wt * tau);
        }
    }
    RotaryAngles::new(t, n, angles)
}

/// Head-agnostic entry point; valid for every variant except `SplitByHead`,
/// whose angles differ per head.
pub fn compute_angles(indices: &[i64], taus: &[f64], spec: &AngleSourceSpec) -> Result<RotaryAngles> {
    if spec.variant() == Variant::SplitByHead {
        return Err(Error::Input(
            "split-by-head angles are per-head; use compute_angles_for_head".into(),
        ));
    }
    compute_angles_for_head(indices, taus, spec, 0)
}

/// Rotate each even–odd channel pair of every row by its plane angle,
/// returning the rotated matrix. Row `i`, pair `k` is rotated by
/// `R(θ_{i,k}) = [[cos, -sin], [sin, cos]]`.
pub fn rotate_pairs(vectors: &Mat, angles: &RotaryAngles) -> Result<Mat> {
    let d = vectors.cols();
    if d % 2 != 0 {
        return Err(Error::Config(format!("rotary width must be even, got {d}")));
    }
    if d / 2 != angles.n_planes() || vectors.rows() != angles.seq_len() {
        return Err(Error::Input(format!(
            "angle table {}x{} does not match vectors {}x{}",
            angles.seq_len(),
            angles.n_planes(),
            vectors.rows(),
            vectors.cols()
        )));
    }
    let mut out = vectors.clone();
    rotate_rows_in_place(out.as_mut_slice(), d, angles);
    Ok(out)
}

/// In-place variant used on hot paths; `x` is row-major `T × d` with `d = 2N`.
pub fn rotate_rows_in_place(x: &mut [f64], d: usize, angles: &RotaryAngles) {
    debug_assert_eq!(d / 2, angles.n_planes());
    debug_assert_eq!(x.len(), angles.seq_len() * d);
    for i in 0..angles.seq_len() {
        let row = &mut x[i * d..(i + 1) * d];
        for (k, &theta) in angles.row(i).iter().enumerate() {
            let (sin, cos) = theta.sin_cos();
            let a = row[2 * k];
            let b = row[2 * k + 1];
            row[2 * k] = a * cos - b * sin;
            row[2 * k + 1] = a * sin + b * cos;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::bank::{build_base_bank, FrequencyBank, SourceUnit};
    use crate::rope::spec::AngleSourceSpec;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn const_bank(w: f64, n: usize, unit: SourceUnit) -> FrequencyBank {
        FrequencyBank::new(vec![w; n], unit).unwrap()
    }

    #[test]
    fn index_only_ignores_taus() {
        let spec = AngleSourceSpec::index_only(
            build_base_bank(10_000.0, 8, SourceUnit::IndexSteps).unwrap(),
        );
        let idx = [0, 1, 2];
        let a = compute_angles(&idx, &[0.0, 0.0, 0.0], &spec).unwrap();
        let b = compute_angles(&idx, &[13.0, -4.0, 1e6], &spec).unwrap();
        assert_eq!(a, b);
        for (i, &pos) in idx.iter().enumerate() {
            for (k, &w) in spec.index_bank().omegas().iter().enumerate() {
                assert_eq!(a.at(i, k), pos as f64 * w);
            }
        }
    }

    #[test]
    fn time_only_ignores_indices() {
        let spec = AngleSourceSpec::time_only(const_bank(0.25, 2, SourceUnit::TauUnits));
        let taus = [0.0, 3.5, 9.0];
        let a = compute_angles(&[0, 1, 2], &taus, &spec).unwrap();
        let b = compute_angles(&[40, 80, 120], &taus, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.at(1, 0), 3.5 * 0.25);
    }

    #[test]
    fn fused_angle_hand_value() {
        let spec = AngleSourceSpec::early_fusion_uniform(
            const_bank(0.1, 1, SourceUnit::IndexSteps),
            const_bank(0.1, 1, SourceUnit::TauUnits),
            0.5,
        )
        .unwrap();
        let a = compute_angles(&[2], &[4.0], &spec).unwrap();
        assert!((a.at(0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let spec = AngleSourceSpec::index_only(const_bank(1.0, 1, SourceUnit::IndexSteps));
        assert!(compute_angles(&[0, 1], &[0.0], &spec).is_err());
    }

    #[test]
    fn rotation_identity_quarter_and_half_turn() {
        let angles = RotaryAngles::new(3, 1, vec![0.0, FRAC_PI_2, PI]).unwrap();
        let v = Mat::from_vec(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.7, -0.3]);
        let r = rotate_pairs(&v, &angles).unwrap();
        // θ = 0: unchanged
        assert_eq!(r.row(0), &[1.0, 0.0]);
        // θ = π/2: (1,0) -> (0,1)
        assert!((r.at(1, 0) - 0.0).abs() < 1e-15);
        assert!((r.at(1, 1) - 1.0).abs() < 1e-15);
        // θ = π: (a,b) -> (-a,-b)
        assert!((r.at(2, 0) + 0.7).abs() < 1e-15);
        assert!((r.at(2, 1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rotation_rejects_odd_width() {
        let angles = RotaryAngles::new(1, 1, vec![0.1]).unwrap();
        let v = Mat::zeros(1, 3);
        assert!(rotate_pairs(&v, &angles).is_err());
    }
}
