//! A small reverse-mode differentiation kernel specialised to the fixed
//! autoencoder topology: every layer returns a cache from `forward` and
//! accumulates parameter gradients in `backward`.

pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod ops;
pub mod param;
pub mod spectrum;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use conv::{Conv1d, ConvCache};
pub use dense::{avg_pool_time, avg_pool_time_backward, Activation, Linear, Mlp, MlpCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use param::{Adam, Module, Parameter};
pub use spectrum::{fft_power, PowerSpectrum, SpectrumCache};
pub use tensor::Tensor2;
