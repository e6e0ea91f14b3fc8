pub mod checkpoint;
pub mod config;
pub mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Arch, ArchConfig, BlstmConfig, CnnConfig, ModelConfig};
pub use network::{argmax_rows, predict_labels, Batch, Model, Objective};
