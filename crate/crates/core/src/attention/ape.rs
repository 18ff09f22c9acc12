//! Fixed sinusoidal absolute position table.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Standard fixed sin/cos table: row `p`, plane `k` holds
/// `sin(p · 10000^(-2k/d_model))` in column `2k` and the matching cosine in
/// column `2k+1`.
pub fn sinusoidal_ape(t_len: usize, d_model: usize) -> Result<Mat> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::Config(format!(
            "sinusoidal table needs an even model width, got {d_model}"
        )));
    }
    let half = d_model / 2;
    let mut table = Mat::zeros(t_len, d_model);
    for p in 0..t_len {
        for k in 0..half {
            let freq = 10_000f64.powf(-2.0 * k as f64 / d_model as f64);
            let angle = p as f64 * freq;
            *table.at_mut(p, 2 * k) = angle.sin();
            *table.at_mut(p, 2 * k + 1) = angle.cos();
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_row() {
        let t = sinusoidal_ape(4, 6).unwrap();
        for k in 0..3 {
            assert_eq!(t.at(0, 2 * k), 0.0);
            assert_eq!(t.at(0, 2 * k + 1), 1.0);
        }
    }

    #[test]
    fn deterministic_across_calls() {
        assert_eq!(sinusoidal_ape(7, 8).unwrap(), sinusoidal_ape(7, 8).unwrap());
    }

    #[test]
    fn angle_formula() {
        let t = sinusoidal_ape(5, 8).unwrap();
        let p = 3usize;
        for k in 0..4 {
            let angle = p as f64 * 10_000f64.powf(-2.0 * k as f64 / 8.0);
            assert!((t.at(p, 2 * k) - angle.sin()).abs() < 1e-15);
            assert!((t.at(p, 2 * k + 1) - angle.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_odd_width() {
        assert!(sinusoidal_ape(4, 5).is_err());
    }
}
