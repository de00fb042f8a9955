//! Config-driven runner around the `ngarch` library: simulate price files,
//! fit models, write one-step-ahead forecasts and rank models across
//! datasets.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;

use std::collections::HashSet;
use std::path::PathBuf;

use rayon::prelude::*;

pub use config::{LoadedConfig, ModelKind, RunConfig};
pub use error::{CliError, CliResult};

/// Runs `f` on every config, at most `jobs` at a time. Results come back in
/// input order. Several configs must not share an output directory.
pub fn run_jobs<T, F>(configs: &[LoadedConfig], jobs: usize, f: F) -> Vec<CliResult<T>>
where
    T: Send,
    F: Fn(&LoadedConfig) -> CliResult<T> + Sync,
{
    if configs.len() > 1 {
        let mut seen = HashSet::new();
        for c in configs {
            let dir: PathBuf = c.output_dir();
            if !seen.insert(dir.clone()) {
                let err = CliError::Config(format!(
                    "{}: output directory {} is shared with another config",
                    c.path.display(),
                    dir.display()
                ));
                return vec![Err(err)];
            }
        }
    }
    if jobs <= 1 || configs.len() <= 1 {
        return configs.iter().map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| configs.par_iter().map(&f).collect()),
        Err(e) => vec![Err(CliError::Config(format!("cannot start {jobs} workers: {e}")))],
    }
}
