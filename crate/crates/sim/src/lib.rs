//! Experiment harness for the distributed cell-free RIS optimizer: JSON
//! configuration, parameter sweeps with CSV output, and the acceptance
//! checks behind `cellfree verify`.

pub mod checks;
pub mod config;
pub mod experiment;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: String, source: std::io::Error },

    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] cellfree_core::Error),
}

impl SimError {
    /// 2 for anything the user can fix in the configuration, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            SimError::ConfigRead { .. } | SimError::Parse { .. } | SimError::Config(_) => 2,
            SimError::Core(cellfree_core::Error::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

/// Worker pool capped by `threads`, else by `CELLFREE_THREADS`.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, SimError> {
    let from_env = std::env::var("CELLFREE_THREADS").ok();
    let n = match (threads, from_env) {
        (Some(n), _) => n,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| SimError::Config(format!("CELLFREE_THREADS must be a positive integer, got {v:?}")))?,
        (None, None) => 0,
    };
    if threads == Some(0) {
        return Err(SimError::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))
}
