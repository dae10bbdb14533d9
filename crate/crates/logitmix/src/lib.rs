//! Desk-scale workbench for outlier-aware classifier training. Small MLPs
//! over synthetic cluster data, trained with a family of mixing-based and
//! outlier-exposure losses, then scored on held-out outliers with threshold
//! -free detection metrics and simple logit-space diagnostics.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod mixing;
pub mod model;
pub mod ood_eval;
pub mod parallel;
pub mod runner;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
