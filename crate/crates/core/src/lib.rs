//! Multi-task 3D attention U-Net that classifies a T1 MRI volume as CN, MCI or AD
//! while synthesizing the matching FDG-PET volume, plus the autodiff engine,
//! data pipeline, objectives and training loop it needs.

pub mod data;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod training;
pub mod verify;

pub use tensor::{Scalar, Tape, Tensor, TensorError, Var};
