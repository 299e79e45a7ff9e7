//! Multi-task wavelet restoration network for fundus images: tensors and
//! reverse-mode autodiff, Haar transform, network blocks, the two-branch
//! model, synthetic degradations, training/evaluation and file I/O.

// `!(x > 0.0)` style checks are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod degradation;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stats;
pub mod suite;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{PadMode, ParamStore, Scalar, Tensor};
