// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod attribute;
pub mod bench;
pub mod eval;
pub mod fixture;
pub mod report;
pub mod trace;

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory (overrides ATTNSCOPE_OUT and the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn load(&self) -> CliResult<RunConfig> {
        let mut config = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    pub fn out_dir(&self, config: &RunConfig) -> PathBuf {
        config.resolve_out_dir(self.out.as_deref())
    }

    pub fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))
    }
}

/// Resolves a directory argument, defaulting to `out/<default>`.
pub fn dir_or(arg: Option<&Path>, out: &Path, default: &str) -> PathBuf {
    arg.map(Path::to_path_buf).unwrap_or_else(|| out.join(default))
}
