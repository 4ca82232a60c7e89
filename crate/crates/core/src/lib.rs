pub mod alignment;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod numcore;
pub mod refine_fuse;
pub mod trainer;

pub use error::{Error, Result};
