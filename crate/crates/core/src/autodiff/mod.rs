//! Dense tensor operations with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! replays the record in reverse to accumulate gradients into every node that
//! requires one. No broadcasting is performed except for bias addition inside
//! `linear`, `conv2d` and `conv_transpose2d`; every other shape mismatch is an
//! error.

mod gradcheck;
mod graph;
mod kernels;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use graph::{
    degenerate_count, logsumexp_slice, BatchNormConfig, Graph, Mode, RunningStats, Var, DEGENERATE_NORM,
};
pub(crate) use graph::note_degenerate;
pub use kernels::{conv_output_size, conv_transpose_output_size};
