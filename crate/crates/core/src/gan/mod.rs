//! Adversarial objective, alternating training loop and generator sampling.

pub mod history;
pub mod loss;
pub mod trainer;


pub use history::{StepRecord, TrainHistory};
pub use loss::{discriminator_loss, generator_loss};
pub use trainer::{generate, load_generator, sample_images, GanConfig, NoiseBatch, Trainer};
