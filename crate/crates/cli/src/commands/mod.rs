mod ablate;
mod convert;
mod eval;
mod pretrain;
mod report;
mod synth;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::{load_config, RunConfig};
use crate::Common;

pub use ablate::ablate;
pub use convert::convert;
pub use eval::{eval, eval_scores};
pub use pretrain::pretrain_embeddings;
pub use report::report;
pub use synth::synth;
pub use train::train;

impl Common {
    /// The config file (or defaults) with command-line overrides applied.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if cfg.threads == 0 {
            return Err(fcc::Error::Config("threads must be at least 1".into()).into());
        }
        if cfg.threads > 1 {
            eprintln!("note: threads = {} recorded; computation runs single-threaded", cfg.threads);
        }
        Ok(cfg)
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| fcc::Error::Config("--out is required for this command".into()).into())
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Manifest path for a command whose output is a single file.
pub(crate) fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(fcc::Error::Data(format!("{what} `{}` does not exist", path.display())).into());
    }
    Ok(())
}
