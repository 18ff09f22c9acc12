//! Hand-written analytic gradients for the full model, including the
//! positional-encoding learnables (APE tables, relative-bias tables, rotary
//! gate/scale raw parameters).

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::forward::{forward_seq, gelu_prime, pe_runtime, LnCache, PeRuntime, PreparedSeq, SeqForward};
use crate::model::{ModelConfig, ParamStore, PeSpec};
use crate::rope::{sigmoid, Variant};

/// Mean next-item cross-entropy plus gradients for every parameter,
/// accumulated over the batch. Dropout (when `rng` is provided and the rate is
/// positive) uses the same draw order as the forward pass, because the
/// backward runs on each sequence's own cached forward.
pub fn loss_and_grads(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &[PreparedSeq],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ParamStore)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let total_positions: usize = batch.iter().map(|s| s.items.len().saturating_sub(1)).sum();
    if total_positions == 0 {
        return Err(Error::Input("batch has no next-item targets".into()));
    }
    let inv_total = 1.0 / total_positions as f64;
    let rt = pe_runtime(params, cfg);
    let mut grads = params.zeros_like();
    let mut loss_sum = 0.0;
    for seq in batch {
        let fwd = forward_seq(params, cfg, seq, rng.as_deref_mut(), &rt)?;
        loss_sum += fwd.loss_sum;
        backward_seq(params, cfg, seq, &fwd, inv_total, &rt, &mut grads)?;
    }
    if let Some(path) = grads.find_non_finite() {
        return Err(Error::Numeric(format!("non-finite gradient at {path}")));
    }
    Ok((loss_sum * inv_total, grads))
}

fn layer_norm_backward(
    dy: &Mat,
    cache: &LnCache,
    gamma: &Mat,
    dgamma: &mut Mat,
    dbeta: &mut Mat,
) -> Mat {
    let (t, d) = (dy.rows(), dy.cols());
    let dn = d as f64;
    let mut dx = Mat::zeros(t, d);
    for i in 0..t {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            *dgamma.at_mut(0, j) += dyr[j] * xh[j];
            *dbeta.at_mut(0, j) += dyr[j];
            let dxh = dyr[j] * gamma.at(0, j);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let istd = cache.inv_std[i];
        let dxr = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * gamma.at(0, j);
            dxr[j] = istd * (dxh - sum_dxhat / dn - xh[j] * sum_dxhat_xhat / dn);
        }
    }
    dx
}

fn add_bias_grad(db: &mut Mat, dy: &Mat) {
    for i in 0..dy.rows() {
        let row = dy.row(i);
        for (j, v) in row.iter().enumerate() {
            *db.at_mut(0, j) += v;
        }
    }
}

fn backward_seq(
    params: &ParamStore,
    cfg: &ModelConfig,
    seq: &PreparedSeq,
    fwd: &SeqForward,
    inv_total: f64,
    rt: &PeRuntime,
    grads: &mut ParamStore,
) -> Result<()> {
    let t = seq.items.len();
    let d = cfg.d_model;
    let embed = params.get("embed");

    // Output head (tied): dlogits = (softmax - onehot) * inv_total.
    let mut dh_final = Mat::zeros(t, d);
    {
        for pos in 0..fwd.n_positions {
            let target = seq.items[pos + 1];
            let prow = fwd.ce_probs.row(pos);
            let hrow = fwd.h_final.row(pos);
            let dhrow = dh_final.row_mut(pos);
            let g_embed = grads.get_mut("embed");
            for v in 0..cfg.vocab_size {
                let dl = (prow[v] - if v == target { 1.0 } else { 0.0 }) * inv_total;
                if dl == 0.0 {
                    continue;
                }
                let ge = g_embed.row_mut(v);
                let ev = embed.row(v);
                for c in 0..d {
                    ge[c] += dl * hrow[c];
                    dhrow[c] += dl * ev[c];
                }
            }
        }
    }

    // Final layer norm.
    let mut dgamma_f = Mat::zeros(1, d);
    let mut dbeta_f = Mat::zeros(1, d);
    let mut dh = layer_norm_backward(
        &dh_final,
        &fwd.final_ln,
        params.get("final_ln.gamma"),
        &mut dgamma_f,
        &mut dbeta_f,
    );
    grads.get_mut("final_ln.gamma").add_assign(&dgamma_f);
    grads.get_mut("final_ln.beta").add_assign(&dbeta_f);

    for l in (0..cfg.n_layers).rev() {
        let lc = &fwd.layers[l];

        // Feed-forward sub-block: h_out = h_mid + FFN(LN2(h_mid)).
        let w2 = params.get(&format!("l{l}.ffn.w2"));
        let g_used = match &lc.ffn_mask {
            Some(m) => {
                let mut gm = lc.ffn_g.clone();
                for (v, s) in gm.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *v *= s;
                }
                gm
            }
            None => lc.ffn_g.clone(),
        };
        {
            let dw2 = g_used.matmul_tn(&dh);
            grads.get_mut(&format!("l{l}.ffn.w2")).add_assign(&dw2);
            add_bias_grad(grads.get_mut(&format!("l{l}.ffn.b2")), &dh);
        }
        let mut dg = dh.matmul_nt(w2);
        if let Some(m) = &lc.ffn_mask {
            for (v, s) in dg.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *v *= s;
            }
        }
        let mut da1 = dg;
        for (v, a) in da1.as_mut_slice().iter_mut().zip(lc.ffn_a1.as_slice()) {
            *v *= gelu_prime(*a);
        }
        {
            let dw1 = lc.ln2_out.matmul_tn(&da1);
            grads.get_mut(&format!("l{l}.ffn.w1")).add_assign(&dw1);
            add_bias_grad(grads.get_mut(&format!("l{l}.ffn.b1")), &da1);
        }
        let dln2_out = da1.matmul_nt(params.get(&format!("l{l}.ffn.w1")));
        let mut dgamma2 = Mat::zeros(1, d);
        let mut dbeta2 = Mat::zeros(1, d);
        let dh_mid_from_ffn = layer_norm_backward(
            &dln2_out,
            &lc.ln2,
            params.get(&format!("l{l}.ln2.gamma")),
            &mut dgamma2,
            &mut dbeta2,
        );
        grads.get_mut(&format!("l{l}.ln2.gamma")).add_assign(&dgamma2);
        grads.get_mut(&format!("l{l}.ln2.beta")).add_assign(&dbeta2);
        let mut dh_mid = dh; // residual path
        dh_mid.add_assign(&dh_mid_from_ffn);

        // Attention sub-block: h_mid = h_in + Attn(LN1(h_in)).
        let dx_aug = attention_backward(params, cfg, seq, lc, l, &dh_mid, rt, grads)?;
        let mut dgamma1 = Mat::zeros(1, d);
        let mut dbeta1 = Mat::zeros(1, d);
        let dh_in_from_attn = layer_norm_backward(
            &dx_aug,
            &lc.ln1,
            params.get(&format!("l{l}.ln1.gamma")),
            &mut dgamma1,
            &mut dbeta1,
        );
        grads.get_mut(&format!("l{l}.ln1.gamma")).add_assign(&dgamma1);
        grads.get_mut(&format!("l{l}.ln1.beta")).add_assign(&dbeta1);
        dh = dh_mid;
        dh.add_assign(&dh_in_from_attn);
    }

    // Embedding input path (tied with the head, so this accumulates on top).
    let g_embed = grads.get_mut("embed");
    for (i, &item) in seq.items.iter().enumerate() {
        let ge = g_embed.row_mut(item);
        for (c, v) in dh.row(i).iter().enumerate() {
            ge[c] += v;
        }
    }
    Ok(())
}

/// Backward through one attention layer; returns the gradient w.r.t. the
/// augmented block input and accumulates every parameter gradient, including
/// the strategy tables and the rotary raw parameters.
#[allow(clippy::too_many_arguments)]
fn attention_backward(
    params: &ParamStore,
    cfg: &ModelConfig,
    seq: &PreparedSeq,
    lc: &crate::model::forward::LayerCache,
    layer: usize,
    dout: &Mat,
    rt: &PeRuntime,
    grads: &mut ParamStore,
) -> Result<Mat> {
    let attn = &lc.attn;
    let t = dout.rows();
    let h = cfg.n_heads;
    let hd = cfg.head_dim;
    let scale = 1.0 / (hd as f64).sqrt();

    let w_o = params.get(&format!("l{layer}.wo"));
    {
        let dw_o = attn.concat.matmul_tn(dout);
        grads.get_mut(&format!("l{layer}.wo")).add_assign(&dw_o);
    }
    let dconcat = dout.matmul_nt(w_o);

    let rope_learnable = matches!(&cfg.pe.primary, PeSpec::Rotary(s) if s.gates_learnable());
    let mut dtheta_planes: Option<Vec<f64>> = None; // dθ aggregated per (i, plane)
    if rope_learnable {
        dtheta_planes = Some(vec![0.0; t * hd / 2]);
    }

    let mut dx_aug = Mat::zeros(t, cfg.d_model);
    for head in 0..h {
        let hf = &attn.heads[head];
        let dctx = Mat::from_fn(t, hd, |i, c| dconcat.at(i, head * hd + c));

        // ctx = P_used · V
        let p_used = match &hf.drop_mask {
            Some(m) => {
                let mut pm = hf.probs.clone();
                for (v, s) in pm.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *v *= s;
                }
                pm
            }
            None => hf.probs.clone(),
        };
        let dv = p_used.matmul_tn(&dctx);
        let mut dp = dctx.matmul_nt(&hf.v);
        if let Some(m) = &hf.drop_mask {
            for (v, s) in dp.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *v *= s;
            }
        }

        // Softmax over the causal prefix.
        let mut ds = Mat::zeros(t, t);
        for i in 0..t {
            let prow = hf.probs.row(i);
            let dprow = dp.row(i);
            let mut inner = 0.0;
            for j in 0..=i {
                inner += dprow[j] * prow[j];
            }
            let dsrow = ds.row_mut(i);
            for j in 0..=i {
                dsrow[j] = prow[j] * (dprow[j] - inner);
            }
        }

        // Relative-bias tables receive the raw score gradient.
        if let PeSpec::RelativeBias { scheme } = &cfg.pe.primary {
            let gbi = grads.get_mut("pe.bias_index");
            for i in 0..t {
                for j in 0..=i {
                    let b = scheme.index_buckets.bucket(seq.indices[i] - seq.indices[j])?;
                    *gbi.at_mut(head, b) += ds.at(i, j);
                }
            }
            let gbt = grads.get_mut("pe.bias_time");
            for i in 0..t {
                for j in 0..=i {
                    let b = scheme.time_buckets.bucket(seq.taus[i] - seq.taus[j]);
                    *gbt.at_mut(head, b) += ds.at(i, j);
                }
            }
        }

        // Scores: S = scale * Q' K'^T (+ bias).
        let mut dq_rot = ds.matmul(&hf.k_rot);
        let mut dk_rot = ds.matmul_tn(&hf.q_rot);
        for v in dq_rot.as_mut_slice().iter_mut() {
            *v *= scale;
        }
        for v in dk_rot.as_mut_slice().iter_mut() {
            *v *= scale;
        }

        // Rotation backward: dq = R(θ)^T dq', and dθ comes out of the rotated
        // values directly: dθ = dq'_x·(-q'_y) + dq'_y·(q'_x).
        let (dq, dk) = if let Some(angles) = &hf.angles {
            let mut dq = Mat::zeros(t, hd);
            let mut dk = Mat::zeros(t, hd);
            for i in 0..t {
                for k in 0..hd / 2 {
                    let theta = angles.at(i, k);
                    let (sin, cos) = theta.sin_cos();

                    let dqx = dq_rot.at(i, 2 * k);
                    let dqy = dq_rot.at(i, 2 * k + 1);
                    let qx = hf.q_rot.at(i, 2 * k);
                    let qy = hf.q_rot.at(i, 2 * k + 1);
                    *dq.at_mut(i, 2 * k) = cos * dqx + sin * dqy;
                    *dq.at_mut(i, 2 * k + 1) = -sin * dqx + cos * dqy;

                    let dkx = dk_rot.at(i, 2 * k);
                    let dky = dk_rot.at(i, 2 * k + 1);
                    let kx = hf.k_rot.at(i, 2 * k);
                    let ky = hf.k_rot.at(i, 2 * k + 1);
                    *dk.at_mut(i, 2 * k) = cos * dkx + sin * dky;
                    *dk.at_mut(i, 2 * k + 1) = -sin * dkx + cos * dky;

                    if let Some(acc) = dtheta_planes.as_mut() {
                        let dtheta =
                            dqx * (-qy) + dqy * qx + dkx * (-ky) + dky * kx;
                        acc[i * (hd / 2) + k] += dtheta;
                    }
                }
            }
            (dq, dk)
        } else {
            (dq_rot, dk_rot)
        };

        // Projections.
        {
            let dwq = attn.x_aug.matmul_tn(&dq);
            grads.get_mut(&format!("l{layer}.h{head}.wq")).add_assign(&dwq);
            let dwk = attn.x_aug.matmul_tn(&dk);
            grads.get_mut(&format!("l{layer}.h{head}.wk")).add_assign(&dwk);
            let dwv = attn.x_aug.matmul_tn(&dv);
            grads.get_mut(&format!("l{layer}.h{head}.wv")).add_assign(&dwv);
        }
        dx_aug.add_assign(&dq.matmul_nt(params.get(&format!("l{layer}.h{head}.wq"))));
        dx_aug.add_assign(&dk.matmul_nt(params.get(&format!("l{layer}.h{head}.wk"))));
        dx_aug.add_assign(&dv.matmul_nt(params.get(&format!("l{layer}.h{head}.wv"))));
    }

    // Rotary raw-parameter gradients through the fused angle.
    if let Some(acc) = dtheta_planes {
        let spec = rt.spec.as_ref().expect("rotary runtime spec");
        debug_assert_eq!(spec.variant(), Variant::EarlyFusion);
        let n = hd / 2;
        let gg = grads.get_mut("pe.rope_gates");
        for k in 0..n {
            let lam = spec.gate(k);
            let alpha_p = spec.index_scale(k);
            let alpha_t = spec.time_scale(k);
            let wp = spec.index_bank().omegas()[k];
            let wt = spec.time_bank().omegas()[k];
            let dsig = lam * (1.0 - lam);
            let mut g = 0.0;
            for (i, (&idx, &tau)) in seq.indices.iter().zip(&seq.taus).enumerate() {
                g += acc[i * n + k] * dsig * (-alpha_p * wp * idx as f64 + alpha_t * wt * tau);
            }
            *gg.at_mut(0, k) += g;
        }
        let gap = grads.get_mut("pe.rope_index_scales");
        for k in 0..n {
            let lam = spec.gate(k);
            let wp = spec.index_bank().omegas()[k];
            let dsoft = sigmoid(spec.index_scale_params()[k]);
            let mut g = 0.0;
            for (i, &idx) in seq.indices.iter().enumerate() {
                g += acc[i * n + k] * dsoft * (1.0 - lam) * wp * idx as f64;
            }
            *gap.at_mut(0, k) += g;
        }
        let gat = grads.get_mut("pe.rope_time_scales");
        for k in 0..n {
            let lam = spec.gate(k);
            let wt = spec.time_bank().omegas()[k];
            let dsoft = sigmoid(spec.time_scale_params()[k]);
            let mut g = 0.0;
            for (i, &tau) in seq.taus.iter().enumerate() {
                g += acc[i * n + k] * dsoft * lam * wt * tau;
            }
            *gat.at_mut(0, k) += g;
        }
    }

    // Absolute tables: the block-input gradient scatters into looked-up rows.
    if let Some(rows) = &attn.index_ape_rows {
        let gt = grads.get_mut("pe.index_table");
        for (i, &r) in rows.iter().enumerate() {
            let src = dx_aug.row(i);
            let dst = gt.row_mut(r);
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    if let Some(rows) = &attn.time_ape_rows {
        let gt = grads.get_mut("pe.time_table");
        for (i, &r) in rows.iter().enumerate() {
            let src = dx_aug.row(i);
            let dst = gt.row_mut(r);
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    if let Some(rows) = &attn.extra_time_ape_rows {
        let gt = grads.get_mut("pe.extra_time_table");
        for (i, &r) in rows.iter().enumerate() {
            let src = dx_aug.row(i);
            let dst = gt.row_mut(r);
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    Ok(dx_aug)
}
