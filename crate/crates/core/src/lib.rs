//! Edge/cloud cascade classification of procedurally generated jade images.

pub mod bench;
pub mod cascade;
pub mod dataset;
pub mod image;
pub mod models;
pub mod protocol;
pub mod server;

pub use cjade_nn::Tensor;
