//! Desk-scale simulator of federated multi-domain sentiment classification.
//!
//! The crate wires together:
//!
//! * [`corpus`] — vocabulary construction, review encoding, and deterministic
//!   synthetic Non-IID scene generation,
//! * [`nn`] — the Embedding–BiGRU–MLP numeric core with exact reverse-mode
//!   gradients and a finite-difference verification harness,
//! * [`losses`] — cross-entropy, empirical HSIC diversity, and
//!   temperature-softmax knowledge-transfer objectives,
//! * [`compression`] — projection-based dimension reduction of embedding
//!   uploads plus the neighbor-intersection privacy probes,
//! * [`federation`] — client update loops, gaussian upload noise, weighted
//!   server aggregation, and the round/experiment drivers,
//! * [`evaluation`] — global-aggregation accuracy and the
//!   finetune-and-probe personalization score,
//! * [`config`] / [`output`] — the experiment runner's configuration and
//!   metric sinks.

pub mod corpus;
pub mod error;
pub mod losses;
pub mod nn;
pub mod rng;
// TODO: restore once written: compression, federation, evaluation, config, output

pub use error::{Error, Result};
