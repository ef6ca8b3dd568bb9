//! E2-Capsnet for facial expression recognition, end to end on the CPU:
//! an AU-aware attention map built from facial landmarks, a five-stage
//! VGG-style backbone with attention fusion, capsule layers coupled by
//! dynamic routing, margin + reconstruction training, and a synthetic
//! face dataset that makes the whole pipeline runnable without licensed
//! FER data.

pub mod adam;
pub mod attention;
pub mod backbone;
pub mod capsules;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod interp;
pub mod losses;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Scalar, Tensor};
