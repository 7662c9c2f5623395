//! Differentiable tensor operations on [`Var`](crate::autodiff::Var)s.

mod conv;
mod elementwise;
mod norm;
mod pool;
mod resize;
mod shape;
mod softmax;

pub use conv::{conv2d, conv_transpose2d};
pub use elementwise::{add, mean, mul, relu, rsub_scalar, scale, sigmoid, sub, sum, tanh};
pub use norm::instance_norm2d;
pub use pool::avg_pool2d;
pub use resize::{bilinear_resize2d, lerp, linear_resample_axis, linear_taps, resize_plane, LinearTap};
pub use shape::{concat, narrow, reshape, shift_columns};
pub use softmax::softmax_axis;
