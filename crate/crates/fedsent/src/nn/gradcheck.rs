//! Finite-difference verification of the reverse-mode gradients.
//!
//! The oracle evaluates the same function the analytic gradient
//! differentiates: the knowledge-transfer teacher logits and the gaussian
//! median-heuristic bandwidths are pinned to their values at the base
//! parameters while coordinates are perturbed.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::corpus::EncodedReview;
use crate::error::Result;
use crate::nn::batch::{batch_loss_and_grads, batch_loss_value, capture_frozen, Objective};
use crate::nn::params::ParamSet;
use crate::rng::{self, tag};

/// Central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest normalized relative error over all probed coordinates.
    pub max_rel_err: f64,
    /// Worst error per parameter array.
    pub per_array: Vec<(String, f64)>,
    /// Analytic embedding gradients on rows outside the batch are exactly 0.
    pub untouched_rows_zero: bool,
}

/// Normalized relative error with a unit floor, so near-zero coordinate
/// pairs compare absolutely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares reverse-mode gradients against central finite differences on
/// every parameter array. Arrays longer than `max_coords_per_array` are
/// probed on a seeded coordinate sample.
pub fn grad_check(
    params: &ParamSet,
    batch: &[EncodedReview],
    objective: &Objective,
    step: f64,
    max_coords_per_array: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = batch_loss_and_grads(params, batch, objective)?.grads;
    let frozen = match objective {
        Objective::Combined(cfg) => Some(capture_frozen(params, batch, cfg)?),
        _ => None,
    };

    let touched: BTreeSet<usize> = batch
        .iter()
        .flat_map(|r| r.indices[..r.true_length].iter().copied())
        .collect();
    let embed_cols = params.dims.embed;
    let mut untouched_rows_zero = true;
    for (name, g) in analytic.arrays() {
        if !name.starts_with("embedding") {
            continue;
        }
        for (flat, &v) in g.iter().enumerate() {
            let row = flat / embed_cols;
            if !touched.contains(&row) && v != 0.0 {
                untouched_rows_zero = false;
            }
        }
    }

    let mut rng = rng::stream(seed, &[tag::GRADCHECK]);
    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    let mut per_array = Vec::new();
    let n_arrays = analytic.arrays().len();

    for idx in 0..n_arrays {
        let (name, len) = {
            let arrays = analytic.arrays();
            (arrays[idx].0.clone(), arrays[idx].1.len())
        };
        let coords: Vec<usize> = if len <= max_coords_per_array {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            all.shuffle(&mut rng);
            all.truncate(max_coords_per_array);
            all
        };
        let mut worst = 0.0f64;
        for &c in &coords {
            let original = work.arrays()[idx].1[c];
            work.arrays_mut()[idx].1[c] = original + step;
            let plus = batch_loss_value(&work, batch, objective, frozen.as_ref())?;
            work.arrays_mut()[idx].1[c] = original - step;
            let minus = batch_loss_value(&work, batch, objective, frozen.as_ref())?;
            work.arrays_mut()[idx].1[c] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic.arrays()[idx].1[c], numeric);
            worst = worst.max(err);
        }
        max_rel = max_rel.max(worst);
        per_array.push((name, worst));
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        per_array,
        untouched_rows_zero,
    })
}
