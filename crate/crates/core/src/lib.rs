pub mod analysis;
pub mod attack;
pub mod bitops;
pub mod cipher;
pub mod error;
pub mod image;
pub mod keystream;
pub mod lclm;
pub mod oracle;

pub use error::{Error, Result};
