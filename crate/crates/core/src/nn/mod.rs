//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer exposes a forward that returns its output together with the
//! state its backward needs, and a backward that maps the upstream gradient
//! to the input gradient while accumulating parameter gradients in place.

mod activation;
mod checkpoint;
mod conv;
mod gradcheck;
mod optim;
mod resize;

pub use activation::{softmax_rows, softmax_rows_backward, Activation};
pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use conv::{Conv2d, ConvCache};
pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use optim::Sgd;
pub use resize::{resize_bilinear, resize_bilinear_backward, upsample_bilinear_x2};
