pub mod data;
pub mod error;
pub mod eval;
pub mod fov;
pub mod nn;
pub mod outcome;
pub mod patch;
pub mod seed;
pub mod tensor;
pub mod wholeimage;

pub use error::{Error, Result};
pub use outcome::{FrameVerdict, ImageProbability, Method};
pub use tensor::{Scalar, Tensor};
