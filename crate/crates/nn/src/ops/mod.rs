//! Layer kernels. Each forward has a matching backward that accumulates
//! parameter gradients and returns the input gradient.

pub mod attention;
pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, depthwise_conv2d, depthwise_separable_conv};
pub use dense::{cross_entropy, dense, relu, sigmoid, softmax, softmax_row};
pub use pool::{avg_pool, global_avg_pool, max_pool};
