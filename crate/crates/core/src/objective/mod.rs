//! Training objective and the training loop.

mod losses;
mod train;

pub use losses::*;
pub use train::*;
