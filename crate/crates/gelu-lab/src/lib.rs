//! Activation-function laboratory.
//!
//! A self-contained CPU stack for studying activation functions: a minimal
//! dense tensor with reverse-mode automatic differentiation, the full
//! activation zoo with analytic derivatives, batch/layer/group normalization,
//! the usual losses and optimizers, a numerical verification suite for the
//! mathematical properties of GELU, and a pre-activated residual CNN harness
//! for activation-comparison experiments.

pub mod activations;
pub mod analysis;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod losses;
pub mod norm;
pub mod optim;
pub mod resnet;
pub mod scalar;
pub mod tensor;

pub use activations::{ActivationKind, GeluConstants, Mode};
pub use error::{Error, Result};
pub use norm::NormKind;
pub use rand_chacha::ChaCha8Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Deterministic stream for every random choice in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
