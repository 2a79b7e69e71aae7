//! Dense tensors, reverse-mode differentiation and the numeric kernels the
//! forecasting model is assembled from.

mod fft;
pub mod gradcheck;
mod kernels;
mod param;
mod tape;
mod tensor;

use thiserror::Error;

pub use fft::{rfft, rfft_magnitudes};
pub use kernels::{
    conv2d_same, conv2d_same_backward, layer_norm, matmul, permute, softmax_lastdim, LAYER_NORM_EPS,
};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{broadcast_shapes, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor extents must be >= 1, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows or stacked tensors have unequal shapes")]
    Ragged,
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("shapes {0:?} and {1:?} are not broadcast-compatible")]
    Broadcast(Vec<usize>, Vec<usize>),
    #[error("matmul dimension mismatch: {0:?} x {1:?}")]
    MatmulShape(Vec<usize>, Vec<usize>),
    #[error("conv2d expects input [B,C,H,W] and square kernel [Cout,C,r,r], got {0:?} and {1:?}")]
    ConvShape(Vec<usize>, Vec<usize>),
    #[error("convolution kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("softmax slice has every entry equal to -inf")]
    DegenerateSoftmax,
    #[error("input too short: need length >= {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid permutation {0:?} for shape {1:?}")]
    Permutation(Vec<usize>, Vec<usize>),
    #[error("axis {axis} range {start}..{end} out of bounds for shape {shape:?}")]
    Axis {
        axis: usize,
        start: usize,
        end: usize,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}
