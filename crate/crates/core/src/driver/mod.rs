//! Configuration, training loop and the commands behind the `bfvmc` binary.

pub mod config;
pub mod measure;
pub mod trace;
pub mod train;

pub use config::{CliOverrides, RunConfig};
pub use measure::{run_check_gradients, run_jfit, run_measure, run_oracle};
pub use train::{run_train, Trainer};
