//! Dense tensors, primitive kernels, a reverse-mode tape and gradient
//! checking.
//!
//! All arithmetic is `f64`. Forward ops are pure functions of their inputs;
//! [`Graph`] records them so gradients can be pulled back in reverse order.

pub mod counter;
mod graph;
mod gradcheck;
pub(crate) mod kernels;
pub(crate) mod layout;
mod ops;
pub mod params;
mod tensor;

pub use graph::{Gradients, Graph, Penalty, Var};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport, FD_STEP};
pub use layout::{
    pack_indices, subwindow_indices, subwindow_rearrange, subwindow_restore, window_indices,
    window_partition, window_reverse,
};
pub use ops::{
    activation, add, conv2d, layer_norm, matmul, mul, softmax_lastdim, transposed_conv2d,
    Activation, ConvSpec,
};
pub use tensor::Tensor;
