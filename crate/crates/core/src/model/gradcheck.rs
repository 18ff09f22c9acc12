//! Finite-difference verification of the analytic gradients.
//!
//! The checker only ever calls the forward path, so it stays independent of
//! the backward implementation it verifies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::backward::loss_and_grads;
use crate::model::forward::{batch_loss, PreparedSeq};
use crate::model::{ModelConfig, ParamStore};
use crate::seeding::rng_from_seed;

/// One checked coordinate.
#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub name: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub max_rel_err: f64,
    pub step: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
    }
}

/// Relative error with an absolute floor, so near-zero pairs compare sanely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic gradients against central finite differences of the
/// forward loss on `n_coords` sampled coordinates (dropout off). Every named
/// tensor contributes at least `min_per_tensor` coordinates (capped by its
/// size), so small strategy tensors such as gates are always covered.
pub fn check_gradients(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &[PreparedSeq],
    n_coords: usize,
    min_per_tensor: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let (_, grads) = loss_and_grads(params, cfg, batch, None)?;

    // Stratified coordinate sample.
    let mut rng = rng_from_seed(seed);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    let n_tensors = params.len();
    for ti in 0..n_tensors {
        let len = params.tensor(ti).value.len();
        for _ in 0..min_per_tensor.min(len) {
            coords.push((ti, rng.gen_range(0..len)));
        }
    }
    let total_scalars = params.n_scalars();
    while coords.len() < n_coords {
        let flat = rng.gen_range(0..total_scalars);
        coords.push(params.locate(flat).expect("flat coordinate in range"));
    }
    coords.sort_unstable();
    coords.dedup();

    let mut perturbed = params.clone();
    let mut rows = Vec::with_capacity(coords.len());
    let mut max_rel = 0.0f64;
    for (ti, off) in coords {
        let name = params.tensor(ti).name.clone();
        let orig = params.tensor(ti).value.as_slice()[off];

        perturbed.tensor_mut(ti).value.as_mut_slice()[off] = orig + step;
        let (loss_plus, _) = batch_loss(&perturbed, cfg, batch, false)?;
        perturbed.tensor_mut(ti).value.as_mut_slice()[off] = orig - step;
        let (loss_minus, _) = batch_loss(&perturbed, cfg, batch, false)?;
        perturbed.tensor_mut(ti).value.as_mut_slice()[off] = orig;

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let analytic = grads.tensor(ti).value.as_slice()[off];
        let re = rel_err(analytic, numeric);
        max_rel = max_rel.max(re);
        rows.push(GradCheckRow { name, offset: off, analytic, numeric, rel_err: re });
    }

    Ok(GradCheckReport { rows, max_rel_err: max_rel, step })
}
