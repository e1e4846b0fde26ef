pub mod bovw;
pub mod config;
pub mod error;
pub mod features;
pub mod harness;
pub mod image;
pub mod keypoints;
pub mod moments;
pub mod retrieval;
pub mod saliency;

pub use error::{Error, Result};
