//! SGD with momentum and per-component learning rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

/// Learning rates keyed by component name. The embedding slots may carry a
/// rate different from the rest of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTable {
    pub base: f64,
    pub embedding: f64,
}

impl LrTable {
    pub fn uniform(lr: f64) -> Self {
        LrTable {
            base: lr,
            embedding: lr,
        }
    }

    /// Rate for a named parameter array (`component.array` names).
    pub fn rate(&self, array_name: &str) -> f64 {
        if array_name.starts_with("embedding") {
            self.embedding
        } else {
            self.base
        }
    }

    /// All rates scaled by a factor (personalization uses μ · LR).
    pub fn scaled(&self, factor: f64) -> Self {
        LrTable {
            base: self.base * factor,
            embedding: self.embedding * factor,
        }
    }

    /// Snapshot as an explicit component-name table for reporting.
    pub fn as_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("base".to_string(), self.base),
            ("embedding".to_string(), self.embedding),
        ])
    }
}

/// Optimizer state: momentum buffers congruent with the parameters.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: LrTable,
    pub momentum: f64,
    velocity: ParamSet,
}

impl OptState {
    pub fn new(params: &ParamSet, lr: LrTable, momentum: f64) -> Self {
        OptState {
            lr,
            momentum,
            velocity: params.zeros_like(),
        }
    }

    /// v ← m·v + g;  p ← p − lr(component)·v.
    pub fn sgd_step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        let grad_arrays = grads.arrays();
        for (name, g) in &grad_arrays {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient in {name}")));
            }
        }
        let mut vel_arrays = self.velocity.arrays_mut();
        let mut par_arrays = params.arrays_mut();
        if vel_arrays.len() != grad_arrays.len() || par_arrays.len() != grad_arrays.len() {
            return Err(Error::numeric("optimizer state incongruent with gradients"));
        }
        let m = self.momentum;
        for (((vn, v), (gn, g)), (pn, p)) in vel_arrays
            .iter_mut()
            .zip(grad_arrays.iter())
            .zip(par_arrays.iter_mut())
        {
            if vn != gn || gn != pn || v.len() != g.len() || g.len() != p.len() {
                return Err(Error::numeric(format!(
                    "optimizer arrays out of alignment at {vn}/{gn}/{pn}"
                )));
            }
            let lr = self.lr.rate(pn);
            for ((vi, &gi), pi) in v.iter_mut().zip(g.iter()).zip(p.iter_mut()) {
                *vi = m * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ModelDims, Placement, SharingConfig};
    use approx::assert_abs_diff_eq;

    fn setup() -> (ParamSet, ParamSet) {
        let dims = ModelDims {
            vocab: 4,
            embed: 2,
            hidden: 2,
            mlp_hidden: 3,
            classes: 2,
            max_len: 3,
        };
        let sharing = SharingConfig {
            embedding: Placement::Shared,
            rnn: Placement::Shared,
            embedding_p: Placement::Absent,
            rnn_p: Placement::Absent,
            projection_s: Placement::Absent,
            projection_p: Placement::Absent,
            classifier_s: Placement::Shared,
            classifier_p: Placement::Absent,
        };
        let params = ParamSet::init(dims, &sharing, 3).unwrap();
        let mut grads = params.zeros_like();
        for (_, g) in grads.arrays_mut() {
            for x in g {
                *x = 0.25;
            }
        }
        (params, grads)
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let (mut params, grads) = setup();
        let before = params.clone();
        let mut opt = OptState::new(&params, LrTable::uniform(0.1), 0.0);
        opt.sgd_step(&mut params, &grads).unwrap();
        for ((_, b), (_, a)) in before.arrays().iter().zip(params.arrays().iter()) {
            for (x, y) in b.iter().zip(a.iter()) {
                assert_abs_diff_eq!(y, &(x - 0.1 * 0.25), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn momentum_unrolls_as_expected() {
        // Constant gradient g, m = 0.9, lr = 1: decrements g then 1.9 g.
        let (mut params, grads) = setup();
        let before = params.clone();
        let mut opt = OptState::new(&params, LrTable::uniform(1.0), 0.9);
        opt.sgd_step(&mut params, &grads).unwrap();
        opt.sgd_step(&mut params, &grads).unwrap();
        let g = 0.25;
        for ((_, b), (_, a)) in before.arrays().iter().zip(params.arrays().iter()) {
            for (x, y) in b.iter().zip(a.iter()) {
                assert_abs_diff_eq!(y, &(x - (g + 1.9 * g)), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (mut params, grads) = setup();
        let before = params.clone();
        let mut opt = OptState::new(&params, LrTable::uniform(0.0), 0.9);
        opt.sgd_step(&mut params, &grads).unwrap();
        assert_eq!(before.max_abs_diff(&params), 0.0);
    }

    #[test]
    fn zero_grad_zero_momentum_is_identity() {
        let (mut params, _) = setup();
        let grads = params.zeros_like();
        let before = params.clone();
        let mut opt = OptState::new(&params, LrTable::uniform(0.5), 0.0);
        opt.sgd_step(&mut params, &grads).unwrap();
        assert_eq!(before.max_abs_diff(&params), 0.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let (mut params, mut grads) = setup();
        grads.arrays_mut()[0].1[0] = f64::NAN;
        let mut opt = OptState::new(&params, LrTable::uniform(0.1), 0.9);
        assert!(opt.sgd_step(&mut params, &grads).is_err());
    }

    #[test]
    fn embedding_rate_differs_from_base() {
        let (mut params, grads) = setup();
        let before = params.clone();
        let mut opt = OptState::new(
            &params,
            LrTable {
                base: 0.1,
                embedding: 0.01,
            },
            0.0,
        );
        opt.sgd_step(&mut params, &grads).unwrap();
        let diff_emb = before.embedding.as_ref().unwrap().weight[[0, 0]]
            - params.embedding.as_ref().unwrap().weight[[0, 0]];
        let diff_clf = before.classifier_s.as_ref().unwrap().w1[[0, 0]]
            - params.classifier_s.as_ref().unwrap().w1[[0, 0]];
        assert_abs_diff_eq!(diff_emb, 0.01 * 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(diff_clf, 0.1 * 0.25, epsilon = 1e-15);
    }
}
