//! Minimal CPU neural-network engine.
//!
//! Dense NCHW tensors, a declarative layer chain ([`ModelSpec`]) with shape
//! inference, hand-written forward/backward kernels for every supported
//! layer, and momentum SGD. Everything is generic over [`Scalar`] so that the
//! same graph can be evaluated in `f32` for production and `f64` for
//! gradient verification.

pub mod error;
pub mod network;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod spec;
pub mod tensor;

pub use error::{NnError, Result};
pub use network::{Gradients, Network, Param, Tape, Weights};
pub use optim::{sgd_step, Sgd};
pub use scalar::Scalar;
pub use spec::{LayerSpec, ModelSpec, ParamRole, ParamSlot};
pub use tensor::Tensor;
