//! Exact reverse-mode gradients for the forward passes in [`super::forward`].
//!
//! Gradients accumulate into a `ParamSet` of the same structure as the
//! parameters (`zeros_like`), so callers can batch samples by repeated
//! accumulation.

use ndarray::{Array1, Array2};

use crate::corpus::EncodedReview;
use crate::error::{Error, Result};
use crate::nn::forward::{BranchCache, EncoderCache, GruRun, SampleCache};
use crate::nn::params::{Affine, BiGru, Embedding, GruCell, Mlp, ParamSet};

/// Gradients of the scalar loss with respect to per-sample outputs. Absent
/// entries contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub d_logits_s: Option<Array1<f64>>,
    pub d_logits_p: Option<Array1<f64>>,
    /// Extra gradient applied directly to the shared-branch feature
    /// (the diversity term attaches here, bypassing the classifier).
    pub d_feat_s: Option<Array1<f64>>,
    pub d_feat_p: Option<Array1<f64>>,
}

/// rank-1 update `g += a bᵀ`.
fn outer_add(g: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            g.row_mut(i).scaled_add(ai, b);
        }
    }
}

/// Backward through a two-layer ReLU perceptron. Returns d_input.
fn mlp_backward(mlp: &Mlp, cache: &super::forward::MlpCache, d_logits: &Array1<f64>, g: &mut Mlp) -> Array1<f64> {
    outer_add(&mut g.w2, d_logits, &cache.hidden);
    g.b2 += d_logits;
    let d_hidden = mlp.w2.t().dot(d_logits);
    let d_pre = &d_hidden * &cache.pre.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
    outer_add(&mut g.w1, &d_pre, &cache.input);
    g.b1 += &d_pre;
    mlp.w1.t().dot(&d_pre)
}

/// Backward through an affine projection. Returns d_input.
fn affine_backward(aff: &Affine, input: &Array1<f64>, d_out: &Array1<f64>, g: &mut Affine) -> Array1<f64> {
    outer_add(&mut g.weight, d_out, input);
    g.bias += d_out;
    aff.weight.t().dot(d_out)
}

/// Backward through one GRU direction (inputs and `d_states` in feeding
/// order). Returns d_inputs in feeding order.
fn gru_backward(
    cell: &GruCell,
    inputs: &[Array1<f64>],
    run: &GruRun,
    d_states: &[Array1<f64>],
    g: &mut GruCell,
) -> Vec<Array1<f64>> {
    let steps = run.steps.len();
    let s = cell.b_update.len();
    let mut d_inputs = vec![Array1::zeros(inputs.first().map_or(0, |x| x.len())); steps];
    let mut dh_next: Array1<f64> = Array1::zeros(s);
    for t in (0..steps).rev() {
        let step = &run.steps[t];
        let gh = &d_states[t] + &dh_next;
        let dz = &gh * &(&step.h_prev - &step.n);
        let dn = &gh * &step.z.mapv(|z| 1.0 - z);
        let mut dh_prev = &gh * &step.z;

        let dc = &dn * &step.n.mapv(|n| 1.0 - n * n);
        outer_add(&mut g.w_cand, &dc, &inputs[t]);
        outer_add(&mut g.u_cand, &dc, &step.rh);
        g.b_cand += &dc;
        let drh = cell.u_cand.t().dot(&dc);
        let dr = &drh * &step.h_prev;
        dh_prev += &(&drh * &step.r);

        let da = &dz * &step.z.mapv(|z| z * (1.0 - z));
        let db = &dr * &step.r.mapv(|r| r * (1.0 - r));
        outer_add(&mut g.w_update, &da, &inputs[t]);
        outer_add(&mut g.u_update, &da, &step.h_prev);
        g.b_update += &da;
        outer_add(&mut g.w_reset, &db, &inputs[t]);
        outer_add(&mut g.u_reset, &db, &step.h_prev);
        g.b_reset += &db;

        d_inputs[t] = cell.w_update.t().dot(&da)
            + cell.w_reset.t().dot(&db)
            + cell.w_cand.t().dot(&dc);
        dh_next = dh_prev + cell.u_update.t().dot(&da) + cell.u_reset.t().dot(&db);
    }
    d_inputs
}

/// Backward through Embedding → BiGRU → SeqMean for one encoder evaluation.
fn encoder_backward(
    rnn: &BiGru,
    review: &EncodedReview,
    enc: &EncoderCache,
    d_o: &Array1<f64>,
    grad_rnn: &mut BiGru,
    grad_emb: &mut Embedding,
) {
    let t_len = enc.true_length;
    let s = rnn.fwd.b_update.len();
    // SeqMean spreads d_o uniformly over the valid columns.
    let d_col = d_o / t_len as f64;
    let d_fwd_states: Vec<Array1<f64>> = (0..t_len)
        .map(|_| d_col.slice(ndarray::s![..s]).to_owned())
        .collect();
    // Backward-direction step k processed position t_len-1-k; the external
    // gradient on every valid position is the same d_col slice.
    let d_bwd_states: Vec<Array1<f64>> = (0..t_len)
        .map(|_| d_col.slice(ndarray::s![s..]).to_owned())
        .collect();

    let inputs_fwd: Vec<Array1<f64>> = (0..t_len).map(|t| enc.e.column(t).to_owned()).collect();
    let inputs_bwd: Vec<Array1<f64>> = (0..t_len)
        .rev()
        .map(|t| enc.e.column(t).to_owned())
        .collect();

    let d_in_fwd = gru_backward(&rnn.fwd, &inputs_fwd, &enc.fwd, &d_fwd_states, &mut grad_rnn.fwd);
    let d_in_bwd = gru_backward(&rnn.bwd, &inputs_bwd, &enc.bwd, &d_bwd_states, &mut grad_rnn.bwd);

    let d = enc.e.nrows();
    let mut d_e = Array2::zeros((d, t_len));
    for t in 0..t_len {
        let mut col = d_e.column_mut(t);
        col += &d_in_fwd[t];
        col += &d_in_bwd[t_len - 1 - t];
    }
    for t in 0..t_len {
        let idx = review.indices[t];
        grad_emb.weight.row_mut(idx).scaled_add(1.0, &d_e.column(t));
    }
}

fn branch_backward(
    clf: &Mlp,
    proj: Option<&Affine>,
    branch: &BranchCache,
    d_logits: Option<&Array1<f64>>,
    d_feat_extra: Option<&Array1<f64>>,
    grad_clf: &mut Mlp,
    grad_proj: Option<&mut Affine>,
) -> Option<Array1<f64>> {
    let mut d_feat = match d_logits {
        Some(dl) => mlp_backward(clf, &branch.mlp, dl, grad_clf),
        None => Array1::zeros(branch.feat.len()),
    };
    if let Some(extra) = d_feat_extra {
        d_feat += extra;
    }
    if d_feat.iter().all(|&x| x == 0.0) {
        return None;
    }
    Some(match proj {
        Some(p) => {
            let gp = grad_proj.expect("gradient container missing projection slot");
            affine_backward(p, &branch.o, &d_feat, gp)
        }
        None => d_feat,
    })
}

/// Accumulates parameter gradients for one sample into `grads`.
pub fn backward_sample(
    params: &ParamSet,
    review: &EncodedReview,
    cache: &SampleCache,
    out: &OutputGrads,
    grads: &mut ParamSet,
) -> Result<()> {
    let feat_dim = params.dims.feature();
    let mut d_o_main: Array1<f64> = Array1::zeros(feat_dim);
    let mut d_o_priv: Array1<f64> = Array1::zeros(feat_dim);
    let mut main_touched = false;
    let mut priv_touched = false;

    if let (Some(branch), Some(clf)) = (&cache.branch_s, &params.classifier_s) {
        let grad_clf = grads
            .classifier_s
            .as_mut()
            .ok_or_else(|| Error::numeric("gradient container missing classifier_s"))?;
        if let Some(d_o) = branch_backward(
            clf,
            params.projection_s.as_ref(),
            branch,
            out.d_logits_s.as_ref(),
            out.d_feat_s.as_ref(),
            grad_clf,
            grads.projection_s.as_mut(),
        ) {
            d_o_main += &d_o;
            main_touched = true;
        }
    }

    if let (Some(branch), Some(clf)) = (&cache.branch_p, &params.classifier_p) {
        let grad_clf = grads
            .classifier_p
            .as_mut()
            .ok_or_else(|| Error::numeric("gradient container missing classifier_p"))?;
        if let Some(d_o) = branch_backward(
            clf,
            params.projection_p.as_ref(),
            branch,
            out.d_logits_p.as_ref(),
            out.d_feat_p.as_ref(),
            grad_clf,
            grads.projection_p.as_mut(),
        ) {
            if cache.enc_p.is_some() {
                d_o_priv += &d_o;
                priv_touched = true;
            } else {
                d_o_main += &d_o;
                main_touched = true;
            }
        }
    }

    if main_touched {
        let rnn = params.rnn.as_ref().expect("encoder rnn present");
        let grad_rnn = grads
            .rnn
            .as_mut()
            .ok_or_else(|| Error::numeric("gradient container missing rnn"))?;
        let grad_emb = grads
            .embedding
            .as_mut()
            .ok_or_else(|| Error::numeric("gradient container missing embedding"))?;
        encoder_backward(rnn, review, &cache.enc, &d_o_main, grad_rnn, grad_emb);
    }

    if priv_touched {
        let enc_p = cache.enc_p.as_ref().expect("private encoder cache present");
        // The private branch may duplicate only part of the encoder; route
        // each gradient to the slot that actually produced the activation.
        let rnn_weights = params.rnn_p.as_ref().or(params.rnn.as_ref()).unwrap();
        let ParamSet {
            embedding,
            embedding_p,
            rnn,
            rnn_p,
            ..
        } = grads;
        let grad_emb = if params.embedding_p.is_some() {
            embedding_p.as_mut()
        } else {
            embedding.as_mut()
        }
        .ok_or_else(|| Error::numeric("gradient container missing private-path embedding"))?;
        let grad_rnn = if params.rnn_p.is_some() {
            rnn_p.as_mut()
        } else {
            rnn.as_mut()
        }
        .ok_or_else(|| Error::numeric("gradient container missing private-path rnn"))?;
        encoder_backward(rnn_weights, review, enc_p, &d_o_priv, grad_rnn, grad_emb);
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::forward_sample;
    use crate::nn::params::{ModelDims, Placement, SharingConfig};

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 6,
            embed: 3,
            hidden: 2,
            mlp_hidden: 4,
            classes: 2,
            max_len: 4,
        }
    }

    fn sharing() -> SharingConfig {
        SharingConfig {
            embedding: Placement::Shared,
            rnn: Placement::Shared,
            embedding_p: Placement::Absent,
            rnn_p: Placement::Absent,
            projection_s: Placement::Shared,
            projection_p: Placement::Private,
            classifier_s: Placement::Shared,
            classifier_p: Placement::Private,
        }
    }

    #[test]
    fn zero_output_grads_give_zero_param_grads() {
        let params = ParamSet::init(dims(), &sharing(), 1).unwrap();
        let review = EncodedReview {
            indices: vec![0, 1, 5, 5],
            true_length: 2,
            label: 0,
        };
        let cache = forward_sample(&params, &review).unwrap();
        let mut grads = params.zeros_like();
        backward_sample(&params, &review, &cache, &OutputGrads::default(), &mut grads).unwrap();
        assert_eq!(grads.norm_sq(), 0.0);
    }

    #[test]
    fn embedding_grad_touches_only_seen_rows() {
        let params = ParamSet::init(dims(), &sharing(), 2).unwrap();
        let review = EncodedReview {
            indices: vec![1, 3, 5, 5],
            true_length: 2,
            label: 0,
        };
        let cache = forward_sample(&params, &review).unwrap();
        let mut grads = params.zeros_like();
        let out = OutputGrads {
            d_logits_s: Some(ndarray::array![1.0, -1.0]),
            d_logits_p: Some(ndarray::array![0.5, 0.5]),
            ..Default::default()
        };
        backward_sample(&params, &review, &cache, &out, &mut grads).unwrap();
        let ge = &grads.embedding.as_ref().unwrap().weight;
        for row in [0, 2, 4, 5] {
            assert!(ge.row(row).iter().all(|&x| x == 0.0), "row {row} touched");
        }
        assert!(ge.row(1).iter().any(|&x| x != 0.0));
        assert!(ge.row(3).iter().any(|&x| x != 0.0));
    }
}
