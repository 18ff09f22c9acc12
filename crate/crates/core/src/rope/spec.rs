//! The unified time-and-order angle source.
//!
//! Every variant is the same per-plane fusion
//! `θ_k(i) = (1-λ_k)·α^p_k·i·ω^p_k + λ_k·α^t_k·τ_i·ω^t_k`, differing only in
//! how the gates λ are constrained: free in `[0,1]` for early fusion, hard 0/1
//! per plane for split-by-dimension, hard 0/1 per head for split-by-head, and
//! all-0 / all-1 for the single-source variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::bank::{FrequencyBank, SourceUnit};

/// Logistic map used for learnable gates.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`, used for learnable positive scales.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Raw value whose softplus equals `y` (inverse of [`softplus`]).
pub fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    y + (-(-y).exp()).ln_1p()
}

/// Which fusion of index and time drives the rotary angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    IndexOnly,
    TimeOnly,
    EarlyFusion,
    SplitByDim,
    SplitByHead,
}

/// Disjoint assignment of rotary planes to the time and index sources.
///
/// Assignment is deterministic: the first `|T|` plane slots carry time, the
/// rest carry index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneAllocation {
    n_planes: usize,
    n_time: usize,
}

impl PlaneAllocation {
    pub fn n_planes(&self) -> usize {
        self.n_planes
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_index(&self) -> usize {
        self.n_planes - self.n_time
    }

    #[inline]
    pub fn is_time_plane(&self, k: usize) -> bool {
        k < self.n_time
    }

    pub fn time_planes(&self) -> impl Iterator<Item = usize> {
        0..self.n_time
    }

    pub fn index_planes(&self) -> impl Iterator<Item = usize> {
        self.n_time..self.n_planes
    }

    /// Capacity ratio ρ = |T| / N.
    pub fn ratio(&self) -> f64 {
        self.n_time as f64 / self.n_planes as f64
    }
}

/// Disjoint assignment of attention heads to the time and index sources.
/// The lowest head indices go to the time side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadAllocation {
    n_heads: usize,
    n_time: usize,
}

impl HeadAllocation {
    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_index(&self) -> usize {
        self.n_heads - self.n_time
    }

    #[inline]
    pub fn is_time_head(&self, h: usize) -> bool {
        h < self.n_time
    }

    pub fn ratio(&self) -> f64 {
        self.n_time as f64 / self.n_heads as f64
    }
}

/// Round-half-up of `x`, documented so sweep cardinalities are reproducible.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Split `n` planes so that `round_half_up(rho * n)` of them carry time.
pub fn allocate_planes(n: usize, rho: f64) -> Result<PlaneAllocation> {
    if n == 0 {
        return Err(Error::Config("plane allocation needs at least one plane".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("split ratio must lie in [0, 1], got {rho}")));
    }
    let n_time = round_half_up(rho * n as f64).min(n);
    Ok(PlaneAllocation { n_planes: n, n_time })
}

/// Split `h` heads so that `round_half_up(rho * h)` of them carry time.
pub fn allocate_heads(h: usize, rho: f64) -> Result<HeadAllocation> {
    if h == 0 {
        return Err(Error::Config("head allocation needs at least one head".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("split ratio must lie in [0, 1], got {rho}")));
    }
    let n_time = round_half_up(rho * h as f64).min(h);
    Ok(HeadAllocation { n_heads: h, n_time })
}

/// Fully resolved angle source: banks, gates, and scales for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSourceSpec {
    variant: Variant,
    index_bank: FrequencyBank,
    time_bank: FrequencyBank,
    /// Per-plane gate parameters. Raw reals when `gates_learnable` (mapped
    /// through the logistic on read), constrained values in `[0,1]` otherwise.
    /// Empty for `SplitByHead`, where the gate is per head.
    gate_params: Vec<f64>,
    /// Per-plane index-scale parameters; raw (softplus-mapped) when learnable.
    index_scale_params: Vec<f64>,
    /// Per-plane time-scale parameters; raw (softplus-mapped) when learnable.
    time_scale_params: Vec<f64>,
    gates_learnable: bool,
    plane_allocation: Option<PlaneAllocation>,
    head_allocation: Option<HeadAllocation>,
    /// Per-plane source frequencies after split-by-dimension re-laddering
    /// (inactive side stored as 0, which the hard gate annihilates anyway).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    split_omegas: Option<(Vec<f64>, Vec<f64>)>,
}

impl AngleSourceSpec {
    /// Vanilla index-only rotation; `taus` never influence the angles.
    pub fn index_only(index_bank: FrequencyBank) -> Self {
        let n = index_bank.len();
        // The inert time side reuses the index ladder's values; the hard zero
        // gate keeps it out of every angle.
        let time_bank =
            FrequencyBank::new(index_bank.omegas().to_vec(), SourceUnit::TauUnits).unwrap();
        AngleSourceSpec {
            variant: Variant::IndexOnly,
            index_bank,
            time_bank,
            gate_params: vec![0.0; n],
            index_scale_params: vec![1.0; n],
            time_scale_params: vec![1.0; n],
            gates_learnable: false,
            plane_allocation: None,
            head_allocation: None,
            split_omegas: None,
        }
    }

    /// Time-only rotation; indices never influence the angles.
    pub fn time_only(time_bank: FrequencyBank) -> Self {
        let n = time_bank.len();
        let index_bank =
            FrequencyBank::new(time_bank.omegas().to_vec(), SourceUnit::IndexSteps).unwrap();
        AngleSourceSpec {
            variant: Variant::TimeOnly,
            index_bank,
            time_bank,
            gate_params: vec![1.0; n],
            index_scale_params: vec![1.0; n],
            time_scale_params: vec![1.0; n],
            gates_learnable: false,
            plane_allocation: None,
            head_allocation: None,
            split_omegas: None,
        }
    }

    /// Soft per-plane fusion of index and time angles.
    ///
    /// In fixed mode (`gates_learnable == false`) `gates` must lie in `[0,1]`
    /// and scales must be positive; in learnable mode all three are raw reals
    /// mapped through logistic / softplus on read.
    pub fn early_fusion(
        index_bank: FrequencyBank,
        time_bank: FrequencyBank,
        gates: Vec<f64>,
        index_scales: Vec<f64>,
        time_scales: Vec<f64>,
        gates_learnable: bool,
    ) -> Result<Self> {
        let n = index_bank.len();
        if time_bank.len() != n {
            return Err(Error::Config(format!(
                "index and time banks must have equal plane counts, got {n} vs {}",
                time_bank.len()
            )));
        }
        for (name, v) in [("gates", &gates), ("index_scales", &index_scales), ("time_scales", &time_scales)] {
            if v.len() != n {
                return Err(Error::Config(format!(
                    "{name} length {} does not match plane count {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !gates_learnable {
            if gates.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                return Err(Error::Config("fixed gates must lie in [0, 1]".into()));
            }
            if index_scales.iter().chain(&time_scales).any(|&a| a <= 0.0) {
                return Err(Error::Config("fixed scales must be positive".into()));
            }
        }
        Ok(AngleSourceSpec {
            variant: Variant::EarlyFusion,
            index_bank,
            time_bank,
            gate_params: gates,
            index_scale_params: index_scales,
            time_scale_params: time_scales,
            gates_learnable,
            plane_allocation: None,
            head_allocation: None,
            split_omegas: None,
        })
    }

    /// Early fusion with unit scales and a uniform fixed gate.
    pub fn early_fusion_uniform(
        index_bank: FrequencyBank,
        time_bank: FrequencyBank,
        gate: f64,
    ) -> Result<Self> {
        let n = index_bank.len();
        AngleSourceSpec::early_fusion(
            index_bank,
            time_bank,
            vec![gate; n],
            vec![1.0; n],
            vec![1.0; n],
            false,
        )
    }

    /// Hard per-plane gate: the first `round_half_up(rho*N)` planes carry
    /// time, the rest carry index. Each side is re-laddered over its own
    /// plane count so both sources keep full multi-scale coverage.
    pub fn split_by_dim(
        index_bank: FrequencyBank,
        time_bank: FrequencyBank,
        rho: f64,
    ) -> Result<Self> {
        let n = index_bank.len();
        if time_bank.len() != n {
            return Err(Error::Config(format!(
                "index and time banks must have equal plane counts, got {n} vs {}",
                time_bank.len()
            )));
        }
        let alloc = allocate_planes(n, rho)?;
        let time_sub = time_bank.resampled(alloc.n_time());
        let index_sub = index_bank.resampled(alloc.n_index());
        let mut omega_p = vec![0.0; n];
        let mut omega_t = vec![0.0; n];
        let mut gates = vec![0.0; n];
        for k in 0..n {
            if alloc.is_time_plane(k) {
                omega_t[k] = time_sub[k];
                gates[k] = 1.0;
            } else {
                omega_p[k] = index_sub[k - alloc.n_time()];
            }
        }
        Ok(AngleSourceSpec {
            variant: Variant::SplitByDim,
            index_bank,
            time_bank,
            gate_params: gates,
            index_scale_params: vec![1.0; n],
            time_scale_params: vec![1.0; n],
            gates_learnable: false,
            plane_allocation: Some(alloc),
            head_allocation: None,
            split_omegas: Some((omega_p, omega_t)),
        })
    }

    /// Hard per-head gate: the first `round_half_up(rho*H)` heads rotate by
    /// time on every plane, the rest by index on every plane.
    pub fn split_by_head(
        index_bank: FrequencyBank,
        time_bank: FrequencyBank,
        rho: f64,
        n_heads: usize,
    ) -> Result<Self> {
        let n = index_bank.len();
        if time_bank.len() != n {
            return Err(Error::Config(format!(
                "index and time banks must have equal plane counts, got {n} vs {}",
                time_bank.len()
            )));
        }
        let alloc = allocate_heads(n_heads, rho)?;
        Ok(AngleSourceSpec {
            variant: Variant::SplitByHead,
            index_bank,
            time_bank,
            gate_params: Vec::new(),
            index_scale_params: vec![1.0; n],
            time_scale_params: vec![1.0; n],
            gates_learnable: false,
            plane_allocation: None,
            head_allocation: Some(alloc),
            split_omegas: None,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n_planes(&self) -> usize {
        self.index_bank.len()
    }

    pub fn index_bank(&self) -> &FrequencyBank {
        &self.index_bank
    }

    pub fn time_bank(&self) -> &FrequencyBank {
        &self.time_bank
    }

    pub fn gates_learnable(&self) -> bool {
        self.gates_learnable
    }

    pub fn plane_allocation(&self) -> Option<&PlaneAllocation> {
        self.plane_allocation.as_ref()
    }

    pub fn head_allocation(&self) -> Option<&HeadAllocation> {
        self.head_allocation.as_ref()
    }

    /// Raw gate parameters (see field docs). Empty for `SplitByHead`.
    pub fn gate_params(&self) -> &[f64] {
        &self.gate_params
    }

    pub fn index_scale_params(&self) -> &[f64] {
        &self.index_scale_params
    }

    pub fn time_scale_params(&self) -> &[f64] {
        &self.time_scale_params
    }

    /// Overwrite the raw gate/scale parameters; used by training when they are
    /// learnable.
    pub fn set_raw_params(
        &mut self,
        gates: Vec<f64>,
        index_scales: Vec<f64>,
        time_scales: Vec<f64>,
    ) -> Result<()> {
        if !self.gates_learnable {
            return Err(Error::Config("angle source is not in learnable mode".into()));
        }
        let n = self.n_planes();
        if gates.len() != n || index_scales.len() != n || time_scales.len() != n {
            return Err(Error::Input("raw parameter length does not match plane count".into()));
        }
        self.gate_params = gates;
        self.index_scale_params = index_scales;
        self.time_scale_params = time_scales;
        Ok(())
    }

    /// Constrained gate value for plane `k` (plane-gated variants only).
    pub fn gate(&self, k: usize) -> f64 {
        if self.gates_learnable {
            sigmoid(self.gate_params[k])
        } else {
            self.gate_params[k]
        }
    }

    /// Constrained index scale α^p_k.
    pub fn index_scale(&self, k: usize) -> f64 {
        if self.gates_learnable {
            softplus(self.index_scale_params[k])
        } else {
            self.index_scale_params[k]
        }
    }

    /// Constrained time scale α^t_k.
    pub fn time_scale(&self, k: usize) -> f64 {
        if self.gates_learnable {
            softplus(self.time_scale_params[k])
        } else {
            self.time_scale_params[k]
        }
    }

    /// Number of heads this spec distinguishes (1 unless split-by-head).
    pub fn head_classes(&self) -> usize {
        match self.variant {
            Variant::SplitByHead => self.head_allocation.as_ref().unwrap().n_heads(),
            _ => 1,
        }
    }

    /// Per-plane effective frequencies `(ω̃^p_k, ω̃^t_k)` for one head, where
    /// `ω̃^p_k = (1-λ_k)·α^p_k·ω^p_k` and `ω̃^t_k = λ_k·α^t_k·ω^t_k`. The angle
    /// at position `(i, τ)` is then `ω̃^p_k·i + ω̃^t_k·τ`.
    pub fn effective_frequencies(&self, head: usize) -> Result<Vec<(f64, f64)>> {
        let n = self.n_planes();
        match self.variant {
            Variant::SplitByHead => {
                let alloc = self.head_allocation.as_ref().unwrap();
                if head >= alloc.n_heads() {
                    return Err(Error::Input(format!(
                        "head {head} out of range for {} heads",
                        alloc.n_heads()
                    )));
                }
                let time = alloc.is_time_head(head);
                Ok((0..n)
                    .map(|k| {
                        if time {
                            (0.0, self.time_scale(k) * self.time_bank.omegas()[k])
                        } else {
                            (self.index_scale(k) * self.index_bank.omegas()[k], 0.0)
                        }
                    })
                    .collect())
            }
            Variant::SplitByDim => {
                let (omega_p, omega_t) = self.split_omegas.as_ref().unwrap();
                Ok((0..n)
                    .map(|k| {
                        let lam = self.gate(k);
                        (
                            (1.0 - lam) * self.index_scale(k) * omega_p[k],
                            lam * self.time_scale(k) * omega_t[k],
                        )
                    })
                    .collect())
            }
            _ => Ok((0..n)
                .map(|k| {
                    let lam = self.gate(k);
                    (
                        (1.0 - lam) * self.index_scale(k) * self.index_bank.omegas()[k],
                        lam * self.time_scale(k) * self.time_bank.omegas()[k],
                    )
                })
                .collect()),
        }
    }
}
