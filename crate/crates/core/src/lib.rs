//! Transition-based dependency parsing with a pointer network whose decoder
//! is conditioned on the partial structure it has already built.
//!
//! The pipeline, bottom to top:
//!
//! * [`treebank`]: CoNLL-U reading/writing, tree validation, corpus stats.
//! * [`transition`]: the Shift-Attach-p transition system in three focus
//!   orders, oracles, legal-parent masks and dependent tracking.
//! * [`autodiff`]: tensors, a reverse-mode tape, Adam and gradient checks.
//! * [`model`]: vocabulary, encoder, gated structured decoder, pointer and
//!   labeler scorers, checkpoints.
//! * [`infer`]: greedy and beam decoding.
//! * [`train`]: batched training with plateau-driven learning-rate decay.
//! * [`eval`]: attachment scores, punctuation policies, binned accuracy.
//! * [`synth`]: seeded synthetic corpora for tests and examples.

pub mod autodiff;
pub mod eval;
pub mod infer;
pub mod model;
pub mod synth;
pub mod train;
pub mod transition;
pub mod treebank;

mod error;
pub use error::Error;
