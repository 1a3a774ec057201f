//! Tensor math, reverse-mode differentiation and the steering CNN.
//!
//! The network is PilotNet with a sigmoid head, ReLU (or leaky ReLU) hidden
//! activations and inverted dropout in the middle of the convolution stack.
//! Activations are stored channel-last (`N x H x W x C`); convolutions lower
//! to a single GEMM per layer via im2col.

mod adam;
mod graph;
mod io;
mod spec;
mod tensor;
mod train;
mod weights;

pub use adam::Adam;
pub use graph::{backward, forward, gradient_check, loss_and_gradients, Batch, Mode};
pub use io::{decode_weights, encode_weights, load_weights, save_weights, MAGIC};
pub use spec::{Activation, ConvSpec, DropoutSpec, Head, ModelSpec, StateInput};
pub use tensor::{normalize, normalize_into, Real, Tensor};
pub use train::{train, train_from, TrainConfig, TrainReport, TrainSet};
pub use weights::{Param, Weights};
