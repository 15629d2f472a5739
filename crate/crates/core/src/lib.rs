//! Active learning around an incremental GAN regressor for reconstructing
//! tunnel geology from TBM operational records.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: tensors, a reverse-mode graph and Adam.
//! - [`model`]: the attention generator and the two-headed discriminator.
//! - [`losses`]: adversarial, supervised, EWC and freshness losses plus
//!   per-weight sensitivities.
//! - [`training`]: pre-training, initial adversarial training and
//!   incremental training.
//! - [`active`]: the query pool and the random, entropy and committee
//!   strategies.
//! - [`geodata`]: a synthetic drilling oracle, record synthesis, labeling
//!   windows, splits and CSV I/O.
//! - [`harness`]: the outer query loop, metrics and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod autodiff;
pub mod error;
pub mod geodata;
pub mod harness;
pub mod losses;
pub mod model;
pub mod par;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use tensor::Tensor;
