//! Parameterized layers, sequential networks, the Adam optimizer and checkpoints.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod layer;
pub mod network;

pub use adam::{Adam, AdamConfig, Moments};
pub use checkpoint::Checkpoint;
pub use layer::{Activation, Layer};
pub use network::{BoundParams, Network, ParameterSet};
