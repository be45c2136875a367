pub mod data;
pub mod error;
pub mod evaluation;
pub mod frailty;
pub mod gauss;
pub mod laplace;
pub mod network;
pub mod semimarkov;
pub mod spell;
pub mod survival;

pub use error::{Error, Result};
