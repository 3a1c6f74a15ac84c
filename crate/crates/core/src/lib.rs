pub mod bench;
pub mod emulator;
pub mod error;
pub mod fda;
pub mod inference;
pub mod kernels;
pub mod nngp;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod subspace;

pub use error::{Error, ErrorKind, Result};
