//! Minimax and adaptive shrinkage between an unrestricted estimate and a
//! restricted estimate that may be biased.

pub mod adaptive;
pub mod bnm;
pub mod error;
pub mod interp;
pub mod lookup;
pub mod model;
pub mod multivar;
pub mod normal;
pub mod priorsolve;
pub mod report;
pub mod thresholding;

pub use error::{Error, Result};
