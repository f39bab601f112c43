pub mod cli;
pub mod config;
pub mod degrade;
pub mod error;
pub mod io;
pub mod losses;
pub mod optimize;
pub mod rope;
pub mod spectral;
pub mod tensor;
pub mod vgpm;
pub mod vicm;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
