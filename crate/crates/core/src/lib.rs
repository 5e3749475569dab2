//! Checkpoint arithmetic for instruction adapters.
//!
//! The instruction-following behaviour of an instruct model is isolated as the
//! weight difference against its pretrained base ([`delta`]). That adapter can
//! be compressed to low rank by truncated SVD ([`spectra`]), combined with
//! densified LoRA/DoRA knowledge adapters ([`peft`]) and re-applied at partial
//! strength to any base with the same architecture ([`merge`]). [`evalkit`] and
//! [`retrieval`] provide the QA scoring and BM25 harness used to evaluate the
//! resulting models.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod checkpoint;
pub mod cli;
pub mod delta;
pub mod error;
pub mod evalkit;
pub mod merge;
pub mod peft;
pub mod retrieval;
pub mod spectra;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, validate_pair, AlignmentReport, Checkpoint};
pub use delta::{apply_delta, extract_delta, DeltaAdapter, ExtractOptions};
pub use error::{Error, Result};
pub use tensor::{add_scaled, cast, frobenius_norm, subtract, DType, NamedTensor, TensorData};
