pub mod checkpoint;
pub mod diffusion;
pub mod distort;
pub mod error;
pub mod mdn;
pub mod metrics;
pub mod oracle;
pub mod schedule;
pub mod scorenet;
pub mod seed;
pub mod signal;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
