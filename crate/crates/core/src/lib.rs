pub mod autodiff;
pub mod cvae;
pub mod data;
pub mod envs;
pub mod error;
pub mod finetune;
pub mod rng;
pub mod spot;
pub mod tabular;

pub use error::{Error, Result};
