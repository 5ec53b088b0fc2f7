use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to reproduce a command: what ran, on which bytes, with
/// which settings, and what it produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub precision: String,
    pub threads: usize,
    /// SHA-256 of every input file, keyed by path.
    pub data_checksums: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<PathBuf>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn key(path: &Path) -> String {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = BufReader::new(
        File::open(path).map_err(|e| fcc::Error::Data(format!("cannot open {}: {e}", path.display())))?,
    );
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: u64, precision: &str, threads: usize) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            precision: precision.to_string(),
            threads,
            data_checksums: BTreeMap::new(),
            started_unix: now(),
            finished_unix: None,
            outputs: Vec::new(),
        })
    }

    pub fn checksum(&mut self, path: &Path) -> Result<()> {
        let sum = sha256_file(path)?;
        self.data_checksums.insert(key(path), sum);
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        self.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| fcc::Error::Data(format!("bad manifest {}: {e}", path.display())).into())
    }

    /// Fails when a file recorded here has changed since.
    pub fn verify(&self, path: &Path) -> Result<()> {
        let key = key(path);
        if let Some(want) = self.data_checksums.get(&key) {
            let got = sha256_file(path)?;
            if &got != want {
                return Err(fcc::Error::Data(format!(
                    "{key} changed since training (sha256 {got}, manifest records {want})"
                ))
                .into());
            }
        }
        Ok(())
    }
}
