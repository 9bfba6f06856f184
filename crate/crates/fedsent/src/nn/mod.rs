//! The Embedding–BiGRU–MLP numeric core: parameter containers, deterministic
//! forward passes, exact reverse-mode gradients with a finite-difference
//! verification harness, and SGD with momentum.

pub mod backward;
pub mod batch;
pub mod forward;
pub mod gradcheck;
pub mod optim;
pub mod params;

pub use backward::{backward_sample, OutputGrads};
pub use batch::{batch_loss_and_grads, batch_loss_value, BatchEval, Objective};
pub use forward::{
    birnn_forward, classify, embed, forward_sample, log_softmax_t, project, seq_mean, softmax_t,
    SampleCache,
};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use optim::{LrTable, OptState};
pub use params::{
    Affine, BiGru, Embedding, GruCell, Mlp, ModelDims, ParamSet, Placement, SharingConfig, Slot,
    SnapshotManifest,
};
