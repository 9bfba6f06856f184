//! Batch-level objective evaluation: forward every sample, combine the
//! per-mode loss, and accumulate exact parameter gradients.

use ndarray::Array2;

use crate::corpus::EncodedReview;
use crate::error::{Error, Result};
use crate::losses::{
    self, BatchOutputs, FrozenStops, LossBreakdown, LossConfig,
};
use crate::nn::backward::{backward_sample, OutputGrads};
use crate::nn::forward::{forward_sample, SampleCache};
use crate::nn::params::ParamSet;

/// The training objective a federation mode optimizes locally.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Plain cross-entropy over the single present branch.
    SingleCe,
    /// Weighted cross-entropies of two complete branches.
    DualCe { weight_s: f64, weight_p: f64 },
    /// Cross-entropies plus knowledge-transfer and diversity terms.
    Combined(LossConfig),
}

/// Loss value, per-term breakdown, and parameter gradients for one batch.
pub struct BatchEval {
    pub breakdown: LossBreakdown,
    pub grads: ParamSet,
}

fn forward_batch(params: &ParamSet, batch: &[EncodedReview]) -> Result<Vec<SampleCache>> {
    batch.iter().map(|r| forward_sample(params, r)).collect()
}

fn stack_features(caches: &[SampleCache], private: bool) -> Result<Array2<f64>> {
    let rows = caches.len();
    let get = |c: &SampleCache| {
        if private {
            c.branch_p.as_ref()
        } else {
            c.branch_s.as_ref()
        }
    };
    let first = get(&caches[0]).ok_or_else(|| Error::numeric("missing branch features"))?;
    let cols = first.feat.len();
    let mut m = Array2::zeros((rows, cols));
    for (i, cache) in caches.iter().enumerate() {
        let b = get(cache).ok_or_else(|| Error::numeric("missing branch features"))?;
        m.row_mut(i).assign(&b.feat);
    }
    Ok(m)
}

fn batch_outputs(caches: &[SampleCache]) -> Result<BatchOutputs> {
    let mut logits_s = Vec::with_capacity(caches.len());
    let mut logits_p = Vec::with_capacity(caches.len());
    for c in caches {
        logits_s.push(
            c.logits_s()
                .ok_or_else(|| Error::numeric("combined objective requires a shared branch"))?
                .clone(),
        );
        logits_p.push(
            c.logits_p()
                .ok_or_else(|| Error::numeric("combined objective requires a private branch"))?
                .clone(),
        );
    }
    Ok(BatchOutputs {
        logits_s,
        logits_p,
        feat_s: stack_features(caches, false)?,
        feat_p: stack_features(caches, true)?,
    })
}

/// Evaluates the objective and its exact gradients over one batch.
pub fn batch_loss_and_grads(
    params: &ParamSet,
    batch: &[EncodedReview],
    objective: &Objective,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::numeric("empty batch"));
    }
    let caches = forward_batch(params, batch)?;
    let labels: Vec<usize> = batch.iter().map(|r| r.label).collect();
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();

    let breakdown = match objective {
        Objective::SingleCe => {
            let use_s = params.classifier_s.is_some();
            let mut ce_sum = 0.0;
            for (i, cache) in caches.iter().enumerate() {
                let logits = if use_s {
                    cache.logits_s()
                } else {
                    cache.logits_p()
                }
                .ok_or_else(|| Error::numeric("single-branch objective found no classifier"))?;
                ce_sum += losses::cross_entropy(logits, labels[i]);
                let mut d = losses::cross_entropy_grad(logits, labels[i]);
                d *= inv_b;
                let out = if use_s {
                    OutputGrads {
                        d_logits_s: Some(d),
                        ..Default::default()
                    }
                } else {
                    OutputGrads {
                        d_logits_p: Some(d),
                        ..Default::default()
                    }
                };
                backward_sample(params, &batch[i], cache, &out, &mut grads)?;
            }
            let ce = ce_sum * inv_b;
            LossBreakdown {
                total: ce,
                ce_s: if use_s { ce } else { 0.0 },
                ce_p: if use_s { 0.0 } else { ce },
                kd: 0.0,
                hsic: 0.0,
            }
        }
        Objective::DualCe { weight_s, weight_p } => {
            let mut ce_s_sum = 0.0;
            let mut ce_p_sum = 0.0;
            for (i, cache) in caches.iter().enumerate() {
                let gs = cache
                    .logits_s()
                    .ok_or_else(|| Error::numeric("dual objective requires a shared branch"))?;
                let gp = cache
                    .logits_p()
                    .ok_or_else(|| Error::numeric("dual objective requires a private branch"))?;
                ce_s_sum += losses::cross_entropy(gs, labels[i]);
                ce_p_sum += losses::cross_entropy(gp, labels[i]);
                let mut ds = losses::cross_entropy_grad(gs, labels[i]);
                let mut dp = losses::cross_entropy_grad(gp, labels[i]);
                ds *= weight_s * inv_b;
                dp *= weight_p * inv_b;
                let out = OutputGrads {
                    d_logits_s: Some(ds),
                    d_logits_p: Some(dp),
                    ..Default::default()
                };
                backward_sample(params, &batch[i], cache, &out, &mut grads)?;
            }
            LossBreakdown {
                total: inv_b * (weight_s * ce_s_sum + weight_p * ce_p_sum),
                ce_s: ce_s_sum * inv_b,
                ce_p: ce_p_sum * inv_b,
                kd: 0.0,
                hsic: 0.0,
            }
        }
        Objective::Combined(cfg) => {
            let outputs = batch_outputs(&caches)?;
            let (breakdown, out_grads) = losses::total_loss_with_grads(&outputs, &labels, cfg)?;
            for (i, cache) in caches.iter().enumerate() {
                let out = OutputGrads {
                    d_logits_s: Some(out_grads.d_logits_s[i].clone()),
                    d_logits_p: Some(out_grads.d_logits_p[i].clone()),
                    d_feat_s: Some(out_grads.d_feat_s.row(i).to_owned()),
                    d_feat_p: Some(out_grads.d_feat_p.row(i).to_owned()),
                };
                backward_sample(params, &batch[i], cache, &out, &mut grads)?;
            }
            breakdown
        }
    };

    if !breakdown.total.is_finite() {
        return Err(Error::numeric("non-finite batch loss"));
    }
    Ok(BatchEval { breakdown, grads })
}

/// Objective value only, optionally with the stop-gradient quantities pinned
/// to `frozen` (the function a finite-difference oracle must probe).
pub fn batch_loss_value(
    params: &ParamSet,
    batch: &[EncodedReview],
    objective: &Objective,
    frozen: Option<&FrozenStops>,
) -> Result<f64> {
    let caches = forward_batch(params, batch)?;
    let labels: Vec<usize> = batch.iter().map(|r| r.label).collect();
    let inv_b = 1.0 / batch.len() as f64;
    match objective {
        Objective::SingleCe => {
            let use_s = params.classifier_s.is_some();
            let mut sum = 0.0;
            for (i, cache) in caches.iter().enumerate() {
                let logits = if use_s {
                    cache.logits_s()
                } else {
                    cache.logits_p()
                }
                .ok_or_else(|| Error::numeric("single-branch objective found no classifier"))?;
                sum += losses::cross_entropy(logits, labels[i]);
            }
            Ok(sum * inv_b)
        }
        Objective::DualCe { weight_s, weight_p } => {
            let mut sum = 0.0;
            for (i, cache) in caches.iter().enumerate() {
                sum += weight_s * losses::cross_entropy(cache.logits_s().unwrap(), labels[i]);
                sum += weight_p * losses::cross_entropy(cache.logits_p().unwrap(), labels[i]);
            }
            Ok(sum * inv_b)
        }
        Objective::Combined(cfg) => {
            let outputs = batch_outputs(&caches)?;
            match frozen {
                Some(f) => losses::total_loss_frozen(&outputs, &labels, cfg, f),
                None => Ok(losses::total_loss(&outputs, &labels, cfg)?.total),
            }
        }
    }
}

/// Captures the frozen stop-gradient quantities at the current parameters.
pub fn capture_frozen(
    params: &ParamSet,
    batch: &[EncodedReview],
    cfg: &LossConfig,
) -> Result<FrozenStops> {
    let caches = forward_batch(params, batch)?;
    let outputs = batch_outputs(&caches)?;
    Ok(losses::freeze_stops(&outputs, cfg))
}
