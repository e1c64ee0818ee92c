//! Benchmark problems and the experiment runner.

mod experiment;
mod inducing;
mod problems;
pub mod sea;

pub use experiment::*;
pub use inducing::select_inducing;
pub use problems::*;
