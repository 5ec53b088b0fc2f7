use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fcc::data::{load_ranking_lists, prepare_lists, Vocabulary};
use fcc::eval::{read_scores, score_lists, write_scores, MetricsReport, ScoredList};
use fcc::model::RankingModel;
use fcc::tensor::{Precision, Scalar};

use super::train::{read_vocab, CONFIG_FILE, MANIFEST_FILE, VOCAB_FILE};
use super::{create_dir, require_file};
use crate::config::load_config;
use crate::manifest::RunManifest;
use crate::Common;

pub const SCORES_FILE: &str = "scores.tsv";

/// Writes metrics, non-optimal buckets and per-list scores into `dir`.
pub(crate) fn write_report(dir: &Path, scored: &[ScoredList], manifest: &mut RunManifest) -> Result<MetricsReport> {
    let report = MetricsReport::new(scored);
    let files = [
        ("metrics.txt", report.table()),
        ("metrics.log", report.records()),
        ("non_optimal.csv", report.non_optimal_csv()),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        manifest.output(path);
    }
    let scores_path = dir.join(SCORES_FILE);
    let mut w = BufWriter::new(File::create(&scores_path)?);
    write_scores(&mut w, scored)?;
    w.flush()?;
    manifest.output(scores_path);
    Ok(report)
}

/// Scores `test` with an in-memory model and writes the report into `dir`.
pub(crate) fn evaluate_model<S: Scalar>(
    model: &RankingModel<S>,
    vocab: &Vocabulary,
    test: &Path,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<MetricsReport> {
    let limits = model.config().limits;
    let raw = load_ranking_lists(test, &limits)?;
    if raw.is_empty() {
        return Err(fcc::Error::Data(format!("{} has no lists", test.display())).into());
    }
    let lists = prepare_lists(&raw, vocab, &limits)?;
    let scored = score_lists(model, &lists)?;
    write_report(dir, &scored, manifest)
}

pub fn eval(common: &Common, checkpoint: &Path, test: Option<PathBuf>, variant: Option<String>) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    let run_dir = checkpoint.parent().unwrap_or(Path::new("."));
    let run_cfg = load_config(&run_dir.join(CONFIG_FILE))
        .with_context(|| format!("checkpoint directory {} lacks a training config", run_dir.display()))?;
    let test = test
        .or_else(|| run_cfg.data.test.clone())
        .ok_or_else(|| fcc::Error::Config("no test set: pass --test or train with data.test".into()))?;
    require_file(&test, "test set")?;
    let train_manifest = run_dir.join(MANIFEST_FILE);
    if train_manifest.is_file() {
        RunManifest::read(&train_manifest)?.verify(&test)?;
    }
    let out = common.out.clone().unwrap_or_else(|| run_dir.join("eval"));
    create_dir(&out)?;
    let precision = common.precision.unwrap_or(run_cfg.precision);
    let settings = serde_json::json!({
        "checkpoint": checkpoint,
        "test": &test,
        "variant": &run_cfg.model.variant,
    });
    let mut manifest = RunManifest::new("eval", &settings, run_cfg.train.seed, precision.as_str(), 1)?;
    manifest.checksum(checkpoint)?;
    manifest.checksum(&test)?;
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;

    let vocab = read_vocab(&run_dir.join(VOCAB_FILE))?;
    let report = match precision {
        Precision::F32 => {
            let model = RankingModel::<f32>::load(checkpoint, variant.as_deref())?;
            evaluate_model(&model, &vocab, &test, &out, &mut manifest)?
        }
        Precision::F64 => {
            let model = RankingModel::<f64>::load(checkpoint, variant.as_deref())?;
            evaluate_model(&model, &vocab, &test, &out, &mut manifest)?
        }
    };
    print!("{}", report.table());
    manifest.finish(&manifest_path)
}

/// Metrics from an existing per-list scores file.
pub fn eval_scores(common: &Common, scores: &Path) -> Result<()> {
    require_file(scores, "scores file")?;
    let out = common.out()?;
    create_dir(out)?;
    let target = out.join(SCORES_FILE);
    if target.is_file() && std::fs::canonicalize(&target)? == std::fs::canonicalize(scores)? {
        return Err(fcc::Error::Config("--out must not be the directory holding the scores file".into()).into());
    }
    let mut manifest = RunManifest::new("eval", &serde_json::json!({ "scores": scores }), 0, "n/a", 1)?;
    manifest.checksum(scores)?;
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    let file = File::open(scores).with_context(|| format!("opening {}", scores.display()))?;
    let scored = read_scores(BufReader::new(file))?;
    if scored.is_empty() {
        return Err(fcc::Error::Data(format!("{} has no lists", scores.display())).into());
    }
    let report = write_report(out, &scored, &mut manifest)?;
    print!("{}", report.table());
    manifest.finish(&manifest_path)
}
