//! Multi-head causal attention with a pluggable positional-encoding strategy.
//!
//! One forward covers every encoding arm: the rotary family rotates Q/K before
//! the score product, absolute encodings add a table to the block input before
//! the projections, and the relative-bias baseline adds a bucketed term to the
//! logits. V is never rotated. Masking is always causal.

mod ape;
mod bias;

pub use ape::sinusoidal_ape;
pub use bias::{
    relative_bias_matrix, IndexBuckets, RelBiasScheme, TimeBuckets, MINUTE_DAYS,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rope::{compute_angles_for_head, rotate_pairs, AngleSourceSpec, RotaryAngles, Variant};

/// Per-head projection matrices plus the shared output projection.
#[derive(Debug, Clone)]
pub struct HeadParams {
    /// `d_model × d` query projections, one per head.
    pub w_q: Vec<Mat>,
    /// `d_model × d` key projections, one per head.
    pub w_k: Vec<Mat>,
    /// `d_model × d` value projections, one per head.
    pub w_v: Vec<Mat>,
    /// `(H·d) × d_model` output projection.
    pub w_o: Mat,
}

impl HeadParams {
    pub fn n_heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.first().map(|m| m.cols()).unwrap_or(0)
    }

    pub fn as_refs(&self) -> HeadParamsRef<'_> {
        HeadParamsRef {
            w_q: self.w_q.iter().collect(),
            w_k: self.w_k.iter().collect(),
            w_v: self.w_v.iter().collect(),
            w_o: &self.w_o,
        }
    }
}

/// Borrowed view of the attention parameters; lets callers that own the
/// matrices elsewhere (e.g. a parameter store) run the same forward.
pub struct HeadParamsRef<'a> {
    pub w_q: Vec<&'a Mat>,
    pub w_k: Vec<&'a Mat>,
    pub w_v: Vec<&'a Mat>,
    pub w_o: &'a Mat,
}

/// Which positional-encoding mechanism drives this attention layer.
pub enum PeKind<'a> {
    /// Rotate Q/K by fused index/time angles.
    Rotary(&'a AngleSourceSpec),
    /// Add the fixed sin/cos table (positions `0..T`) to the block input.
    SinusoidalApe,
    /// Add a learned table row, looked up by the (clamped) event index.
    LearnedIndexApe { table: &'a Mat },
    /// Add a learned table row, looked up by the bucketized time scalar.
    LearnedTimeApe { buckets: &'a TimeBuckets, table: &'a Mat },
    /// Add `b_idx[bucket(Δi)] + b_time[bucket(Δτ)]` to the logits; tables are
    /// `H × n_buckets`, one learnable row per head.
    RelativeBias { scheme: &'a RelBiasScheme, index_bias: &'a Mat, time_bias: &'a Mat },
}

/// A positional-encoding strategy: exactly one primary kind, plus an optional
/// additive time-APE table for the combined "... + time APE" arms.
pub struct PeStrategy<'a> {
    pub kind: PeKind<'a>,
    pub extra_time_ape: Option<(&'a TimeBuckets, &'a Mat)>,
}

impl<'a> PeStrategy<'a> {
    pub fn new(kind: PeKind<'a>) -> Self {
        PeStrategy { kind, extra_time_ape: None }
    }

    pub fn with_time_ape(mut self, buckets: &'a TimeBuckets, table: &'a Mat) -> Self {
        self.extra_time_ape = Some((buckets, table));
        self
    }
}

/// Captured attention probabilities (and optionally logits), layer-major.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub layers: Vec<LayerTrace>,
}

/// One layer's per-head row-stochastic probability matrices.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub probs: Vec<Mat>,
    pub logits: Option<Vec<Mat>>,
}

/// Everything the backward pass needs from one attention layer.
pub struct AttnForward {
    /// Block input after any absolute-table additions (equals the raw input
    /// for rotary and relative-bias kinds).
    pub x_aug: Mat,
    /// Looked-up table row per position for the learned index table.
    pub index_ape_rows: Option<Vec<usize>>,
    /// Looked-up bucket per position for the learned time table.
    pub time_ape_rows: Option<Vec<usize>>,
    /// Looked-up bucket per position for the add-on time table.
    pub extra_time_ape_rows: Option<Vec<usize>>,
    pub heads: Vec<HeadForward>,
    /// `T × (H·d)` concatenated head contexts.
    pub concat: Mat,
    /// `T × d_model` block output.
    pub out: Mat,
}

/// Per-head intermediates.
pub struct HeadForward {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub q_rot: Mat,
    pub k_rot: Mat,
    pub angles: Option<RotaryAngles>,
    /// Scaled (and bias-added) scores; future entries are `-inf`.
    pub logits: Mat,
    /// Row-stochastic over allowed keys; future entries are exactly 0.
    pub probs: Mat,
    /// Inverted-dropout scale per entry (1/(1-rate) or 0); `None` when
    /// dropout is inactive.
    pub drop_mask: Option<Mat>,
    /// `T × d` attention-weighted values.
    pub ctx: Mat,
}

fn validate_inputs(
    x: &Mat,
    params: &HeadParamsRef<'_>,
    indices: &[i64],
    taus: &[f64],
) -> Result<()> {
    let t = x.rows();
    if t == 0 {
        return Err(Error::Input("attention needs at least one position".into()));
    }
    if indices.len() != t || taus.len() != t {
        return Err(Error::Input(format!(
            "positions mismatch: X has {t} rows, indices {}, taus {}",
            indices.len(),
            taus.len()
        )));
    }
    if x.has_non_finite() {
        return Err(Error::Input("NaN or infinite value in attention input".into()));
    }
    if taus.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("NaN or infinite value in taus".into()));
    }
    let h = params.w_q.len();
    if h == 0 || params.w_k.len() != h || params.w_v.len() != h {
        return Err(Error::Input("inconsistent head parameter counts".into()));
    }
    let d_model = x.cols();
    let d = params.w_q[0].cols();
    for m in params.w_q.iter().chain(&params.w_k).chain(&params.w_v) {
        if m.rows() != d_model || m.cols() != d {
            return Err(Error::Input(format!(
                "projection shape {}x{} does not match d_model {d_model}, head width {d}",
                m.rows(),
                m.cols()
            )));
        }
    }
    if params.w_o.rows() != h * d || params.w_o.cols() != d_model {
        return Err(Error::Input(format!(
            "output projection shape {}x{} does not match {}x{d_model}",
            params.w_o.rows(),
            params.w_o.cols(),
            h * d
        )));
    }
    Ok(())
}

fn add_table_rows(x_aug: &mut Mat, table: &Mat, rows: &[usize]) {
    for (i, &r) in rows.iter().enumerate() {
        let row = table.row(r);
        let dst = x_aug.row_mut(i);
        for (d, s) in dst.iter_mut().zip(row) {
            *d += s;
        }
    }
}

/// Full forward with cached intermediates; the public [`mha_forward`] and the
/// model's training path both run through here.
pub fn mha_forward_detailed(
    x: &Mat,
    params: &HeadParamsRef<'_>,
    strategy: &PeStrategy<'_>,
    indices: &[i64],
    taus: &[f64],
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<AttnForward> {
    validate_inputs(x, params, indices, taus)?;
    let t = x.rows();
    let d_model = x.cols();
    let h = params.w_q.len();
    let d = params.w_q[0].cols();

    // Absolute tables are added to the block input, before any projection.
    let mut x_aug = x.clone();
    let mut index_ape_rows = None;
    let mut time_ape_rows = None;
    let mut extra_time_ape_rows = None;
    match &strategy.kind {
        PeKind::SinusoidalApe => {
            let table = sinusoidal_ape(t, d_model)?;
            x_aug.add_assign(&table);
        }
        PeKind::LearnedIndexApe { table } => {
            if table.cols() != d_model || table.rows() == 0 {
                return Err(Error::Input("index table shape does not match d_model".into()));
            }
            let rows: Vec<usize> = indices
                .iter()
                .map(|&i| i.clamp(0, table.rows() as i64 - 1) as usize)
                .collect();
            add_table_rows(&mut x_aug, table, &rows);
            index_ape_rows = Some(rows);
        }
        PeKind::LearnedTimeApe { buckets, table } => {
            if table.cols() != d_model || table.rows() != buckets.n_buckets() {
                return Err(Error::Input("time table shape does not match bucket scheme".into()));
            }
            let rows: Vec<usize> = taus.iter().map(|&tau| buckets.bucket(tau)).collect();
            add_table_rows(&mut x_aug, table, &rows);
            time_ape_rows = Some(rows);
        }
        PeKind::Rotary(spec) => {
            if d % 2 != 0 {
                return Err(Error::Config(format!("rotary head width must be even, got {d}")));
            }
            if spec.n_planes() != d / 2 {
                return Err(Error::Input(format!(
                    "angle source has {} planes but head width {d} needs {}",
                    spec.n_planes(),
                    d / 2
                )));
            }
            if let Some(alloc) = spec.head_allocation() {
                if spec.variant() == Variant::SplitByHead && alloc.n_heads() != h {
                    return Err(Error::Input(format!(
                        "head allocation covers {} heads but attention has {h}",
                        alloc.n_heads()
                    )));
                }
            }
        }
        PeKind::RelativeBias { scheme, index_bias, time_bias } => {
            if index_bias.rows() != h || time_bias.rows() != h {
                return Err(Error::Input("bias tables must have one row per head".into()));
            }
            if index_bias.cols() != scheme.index_buckets.n_buckets()
                || time_bias.cols() != scheme.time_buckets.n_buckets()
            {
                return Err(Error::Input("bias table width does not match bucket scheme".into()));
            }
        }
    }
    if let Some((buckets, table)) = &strategy.extra_time_ape {
        if table.cols() != d_model || table.rows() != buckets.n_buckets() {
            return Err(Error::Input("time table shape does not match bucket scheme".into()));
        }
        let rows: Vec<usize> = taus.iter().map(|&tau| buckets.bucket(tau)).collect();
        add_table_rows(&mut x_aug, table, &rows);
        extra_time_ape_rows = Some(rows);
    }

    let scale = 1.0 / (d as f64).sqrt();
    let mut heads = Vec::with_capacity(h);
    for head in 0..h {
        let q = x_aug.matmul(params.w_q[head]);
        let k = x_aug.matmul(params.w_k[head]);
        let v = x_aug.matmul(params.w_v[head]);

        let (q_rot, k_rot, angles) = if let PeKind::Rotary(spec) = &strategy.kind {
            let class = if spec.variant() == Variant::SplitByHead { head } else { 0 };
            let angles = compute_angles_for_head(indices, taus, spec, class)?;
            let q_rot = rotate_pairs(&q, &angles)?;
            let k_rot = rotate_pairs(&k, &angles)?;
            (q_rot, k_rot, Some(angles))
        } else {
            (q.clone(), k.clone(), None)
        };

        let bias = if let PeKind::RelativeBias { scheme, index_bias, time_bias } = &strategy.kind {
            Some(relative_bias_matrix(
                indices,
                taus,
                scheme,
                index_bias.row(head),
                time_bias.row(head),
            )?)
        } else {
            None
        };

        let mut logits = Mat::zeros(t, t);
        logits.fill(f64::NEG_INFINITY);
        for i in 0..t {
            for j in 0..=i {
                let mut s = 0.0;
                let qi = q_rot.row(i);
                let kj = k_rot.row(j);
                for c in 0..d {
                    s += qi[c] * kj[c];
                }
                s *= scale;
                if let Some(b) = &bias {
                    s += b.at(i, j);
                }
                *logits.at_mut(i, j) = s;
            }
        }

        let mut probs = Mat::zeros(t, t);
        for i in 0..t {
            let row = logits.row(i);
            let m = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..=i {
                let e = (row[j] - m).exp();
                *probs.at_mut(i, j) = e;
                z += e;
            }
            for j in 0..=i {
                *probs.at_mut(i, j) /= z;
            }
        }

        let drop_mask = if let Some((rate, rng)) = dropout.as_mut() {
            let rate = *rate;
            if rate > 0.0 {
                let keep_scale = 1.0 / (1.0 - rate);
                let mut mask = Mat::zeros(t, t);
                for i in 0..t {
                    for j in 0..=i {
                        *mask.at_mut(i, j) =
                            if rng.gen::<f64>() < rate { 0.0 } else { keep_scale };
                    }
                }
                Some(mask)
            } else {
                None
            }
        } else {
            None
        };

        let mut ctx = Mat::zeros(t, d);
        for i in 0..t {
            for j in 0..=i {
                let p = match &drop_mask {
                    Some(m) => probs.at(i, j) * m.at(i, j),
                    None => probs.at(i, j),
                };
                if p == 0.0 {
                    continue;
                }
                let vj = v.row(j);
                let ci = ctx.row_mut(i);
                for c in 0..d {
                    ci[c] += p * vj[c];
                }
            }
        }

        heads.push(HeadForward { q, k, v, q_rot, k_rot, angles, logits, probs, drop_mask, ctx });
    }

    let mut concat = Mat::zeros(t, h * d);
    for (head, hf) in heads.iter().enumerate() {
        for i in 0..t {
            let src = hf.ctx.row(i);
            let dst = &mut concat.row_mut(i)[head * d..(head + 1) * d];
            dst.copy_from_slice(src);
        }
    }
    let out = concat.matmul(params.w_o);

    Ok(AttnForward {
        x_aug,
        index_ape_rows,
        time_ape_rows,
        extra_time_ape_rows,
        heads,
        concat,
        out,
    })
}

/// Spec-level forward: returns the block output and, when `capture` is set, a
/// single-layer trace with per-head probabilities and logits.
pub fn mha_forward(
    x: &Mat,
    params: &HeadParams,
    strategy: &PeStrategy<'_>,
    indices: &[i64],
    taus: &[f64],
    capture: bool,
) -> Result<(Mat, Option<AttentionTrace>)> {
    let fwd = mha_forward_detailed(x, &params.as_refs(), strategy, indices, taus, None)?;
    let trace = capture.then(|| AttentionTrace {
        layers: vec![LayerTrace {
            probs: fwd.heads.iter().map(|hf| hf.probs.clone()).collect(),
            logits: Some(fwd.heads.iter().map(|hf| hf.logits.clone()).collect()),
        }],
    });
    Ok((fwd.out, trace))
}

/// Rotate one head's Q/K under a split-by-head allocation: heads on the index
/// side rotate by `i·ω^p_k` on every plane, heads on the time side by
/// `τ_i·ω^t_k`.
pub fn split_head_rotate(
    q: &Mat,
    k: &Mat,
    head: usize,
    spec: &AngleSourceSpec,
    indices: &[i64],
    taus: &[f64],
) -> Result<(Mat, Mat)> {
    if spec.variant() != Variant::SplitByHead {
        return Err(Error::Input("split_head_rotate needs a split-by-head angle source".into()));
    }
    let angles = compute_angles_for_head(indices, taus, spec, head)?;
    Ok((rotate_pairs(q, &angles)?, rotate_pairs(k, &angles)?))
}
