//! Facial expression recognition from first principles: tensors and
//! hand-written backpropagation, SGD/RMSProp/Adam, the three convolutional
//! and feedforward architectures, a CART baseline, FER-2013 ingestion and a
//! Haar-cascade face detector for inference preprocessing.

pub mod data;
pub mod error;
pub mod facedetect;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod optim;
pub mod pnm;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use tensor::{ConvGeometry, Scalar, Tensor};

/// Number of expression classes.
pub const NUM_CLASSES: usize = 7;
