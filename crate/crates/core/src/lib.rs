pub mod analysis;
pub mod augmentation;
pub mod autodiff;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod graphdata;
pub mod rng;
pub mod subclassing;
pub mod trainer;

pub use error::{Error, Result};
