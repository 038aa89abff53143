pub mod cli;
pub mod dataset;
pub mod dbn;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod letter;
pub mod rbm;

pub use error::{Error, Result};
pub use letter::{Letter, NUM_CLASSES};
