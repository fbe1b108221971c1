//! Dense tensors, reverse-mode differentiation, layers and optimizer.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{
    gaussian_kl, gumbel_softmax, gumbel_softmax_with_noise, reparameterize, GumbelConfig, Linear,
    Mlp, SetAttention,
};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, PoolRows, Segments, Tape, Var};
pub use tensor::Tensor;
