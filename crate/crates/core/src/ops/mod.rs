//! Differentiable layer primitives.
//!
//! Every layer is a pure function of its input and parameters. Forward passes
//! parallelize over the batch; weight gradients are computed per sample and
//! reduced in sample order, so results do not depend on the thread count.

mod conv;
mod gradcheck;
mod kernel;
mod prelu;

pub use conv::{
    conv2d_backward, conv2d_forward, transposed_conv2d_backward, transposed_conv2d_forward, Conv2dParams,
    ConvGrads, TransposedConv2dParams,
};
pub use gradcheck::{finite_difference_grad, relative_error, FD_EPS_F32, FD_EPS_F64};
pub use prelu::{prelu_backward, prelu_forward, PReluGrads, PReluParams, PRELU_INIT_SLOPE};
