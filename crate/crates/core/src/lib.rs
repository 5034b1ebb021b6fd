//! Joint underwater image enhancement and object detection on a shared
//! convolutional backbone, trained in three stages (burn-in, mutual
//! learning, domain adaptation) on procedurally generated underwater scenes.

pub mod aquasynth;
pub mod boxes;
pub mod cli;
pub mod embedviz;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod losses;
pub mod model;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
