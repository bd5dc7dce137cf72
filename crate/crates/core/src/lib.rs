//! Prototype-mask instance segmentation on a small hand-differentiated CPU
//! tensor core.
//!
//! A detector predicts, per anchor, class scores, box offsets and `k` mask
//! coefficients; a fully convolutional branch predicts `k` prototype maps
//! for the whole image. Instance masks are a sigmoid of the product of the
//! two, cropped to the detection box.

pub mod assembly;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod mask;
pub mod model;
pub mod nms;
pub mod nn;
pub mod tensor;
pub mod viz;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use mask::Mask;
pub use tensor::{Real, Tensor};
