//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! The primitive set is exactly what the contrastive objective and the small
//! convolutional encoder need: elementwise arithmetic, `exp`/`log`/`cos`,
//! clamped `acos`, reductions, matrix products, row normalization,
//! concatenation, `logsumexp` variants, 2-D convolution and pooling.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{
    finite_difference_check, finite_difference_check_with, relative_error, CoordFailure,
    GradCheckOptions, GradCheckReport, DEFAULT_STEP,
};
pub use graph::{GradFault, Graph, Var, ACOS_EPS, MIN_NORM};
pub use tensor::Tensor;

pub(crate) use graph::lse;
pub(crate) use tensor::{dot, l2_norm};
