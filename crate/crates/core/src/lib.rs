//! Differentiable search over camera image-processing pipelines.
//!
//! The crate provides a pool of classic ISP operators, trainable proxy
//! networks that make the non-differentiable ones differentiable, a
//! super-network that mixes every candidate module at every pipeline step,
//! and the tooling to extract, fine-tune and run the winning pipeline.

pub mod data;
pub mod error;
pub mod image;
pub mod metrics;
pub mod modules;
pub mod nn;
pub mod pipeline;
pub mod proxy;
pub mod rng;
pub mod supernet;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use image::{Domain, Image};
pub use modules::{ModuleDescriptor, ModuleId, ParamVector};
pub use tensor::Tensor;
