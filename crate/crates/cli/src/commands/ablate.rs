use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fcc::model::VariantRegistry;
use fcc::tensor::{Precision, Scalar};

use super::eval::evaluate_model;
use super::report::write_comparison;
use super::train::{run_training, MANIFEST_FILE};
use super::{create_dir, train::check_inputs};
use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::Common;

fn train_and_eval<S: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let run = run_training::<S>(cfg, dir, "ablate")?;
    let test = run.config.data.test.clone().ok_or_else(|| {
        fcc::Error::Config("ablation needs a test set (data.test or data.synthetic.test_lists)".into())
    })?;
    let eval_dir = dir.join("eval");
    create_dir(&eval_dir)?;
    let settings = serde_json::json!({ "checkpoint": dir.join("model.bin"), "test": &test });
    let mut manifest = RunManifest::new("eval", &settings, cfg.train.seed, cfg.precision.as_str(), cfg.threads)?;
    manifest.checksum(&test)?;
    let manifest_path = eval_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    evaluate_model(&run.model, &run.vocab, &test, &eval_dir, &mut manifest)?;
    manifest.finish(&manifest_path)
}

pub fn ablate(common: &Common, variants: Vec<String>) -> Result<()> {
    let cfg = common.run_config()?;
    let out = common.out()?;
    let variants = if variants.is_empty() { cfg.ablate.variants.clone() } else { variants };
    if variants.len() < 2 {
        return Err(fcc::Error::Config("ablation needs at least two variants".into()).into());
    }
    let registry = VariantRegistry::builtin();
    for v in &variants {
        registry.resolve(v)?;
    }
    check_inputs(&cfg)?;
    if cfg.data.synthetic.is_none() && cfg.data.test.is_none() {
        return Err(fcc::Error::Config("ablation needs data.test".into()).into());
    }

    let mut dirs: Vec<PathBuf> = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let mut run_cfg = cfg.clone();
        run_cfg.model.variant = v.to_uppercase();
        let dir = out.join(format!("{i}_{}", run_cfg.model.variant));
        eprintln!("[{}/{}] {}", i + 1, variants.len(), run_cfg.model.variant);
        match cfg.precision {
            Precision::F32 => train_and_eval::<f32>(&run_cfg, &dir),
            Precision::F64 => train_and_eval::<f64>(&run_cfg, &dir),
        }
        .with_context(|| format!("variant {v}"))?;
        dirs.push(dir);
    }
    let text = write_comparison(&dirs, out, "ablate", cfg.train.seed)?;
    print!("{text}");
    Ok(())
}
