//! The network, its training objective, the training loop and inference.

mod config;
mod infer;
mod network;
mod objective;
mod train;

pub use config::{ModelConfig, Schedule};
pub use infer::{infer, infer_with, Detection, InferOptions, Inference, NmsVariant};
pub use network::{ForwardCache, Model, NetworkOutputs, OutputGrads};
pub use objective::{compute_loss, prepare_targets, ImageTargets};
pub use train::{IterationLog, TrainState, Trainer};
