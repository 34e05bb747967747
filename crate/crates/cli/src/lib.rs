//! Library behind the `thumbqc` command: batch inference, evaluation,
//! training, hyperparameter search, preprocessing and the latency benchmark.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod hpo;
pub mod infer;
pub mod preprocess;
pub mod train;

pub use cli::{run, Cli};
pub use error::{CliError, CliResult};

/// A dedicated pool; `0` threads means one per core.
pub fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::runtime)
}
