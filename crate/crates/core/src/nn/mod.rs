//! Minimal neural network toolkit: tensors, layers with explicit backward
//! passes, losses and the Adam optimizer.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod layout;
pub mod loss;
pub mod lstm;
pub mod noise;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layout::SeqLayout;
pub use tensor::{Parameter, Real, Tensor};
