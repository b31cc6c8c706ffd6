//! GAN training engine and evaluation toolkit for grayscale image augmentation.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`nn`]: dense/conv/transposed-conv layers, sequential networks, Adam, checkpoints.
//! * [`gan`]: adversarial losses, the alternating training loop and sampling.
//! * [`data`]: PGM ingestion, resize/normalize preprocessing, synthetic datasets.
//! * [`metrics`]: pixel histograms and real-vs-generated similarity scores.
//! * [`selfcheck`]: randomized finite-difference sweep over every differentiable op.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
