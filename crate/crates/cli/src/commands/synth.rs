use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use fcc::data::{generate_synthetic, write_ranking_lists, Signal, SynthConfig};

use super::sidecar_manifest;
use crate::manifest::RunManifest;
use crate::Common;

pub(crate) fn write_synthetic(path: &Path, size: usize, signal: Signal, seed: u64, cfg: &SynthConfig) -> Result<()> {
    let lists = generate_synthetic(size, signal, seed, cfg)?;
    let mut w = BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_ranking_lists(&mut w, &lists)?;
    w.flush()?;
    Ok(())
}

pub fn synth(
    common: &Common,
    mode: Signal,
    size: usize,
    min_turns: Option<usize>,
    max_turns: Option<usize>,
) -> Result<()> {
    let out = common.out()?;
    let seed = common.seed.unwrap_or(1);
    let mut cfg = match &common.config {
        Some(_) => common
            .run_config()?
            .data
            .synthetic
            .map(|s| s.generator)
            .unwrap_or_default(),
        None => SynthConfig::default(),
    };
    cfg.min_turns = min_turns.unwrap_or(cfg.min_turns);
    cfg.max_turns = max_turns.unwrap_or(cfg.max_turns);
    cfg.validate()?;

    let settings = serde_json::json!({ "mode": mode, "size": size, "generator": &cfg });
    let mut manifest = RunManifest::new("synth", &settings, seed, "n/a", 1)?;
    let manifest_path = sidecar_manifest(out);
    manifest.write(&manifest_path)?;
    write_synthetic(out, size, mode, seed, &cfg)?;
    manifest.output(out);
    manifest.finish(&manifest_path)
}
