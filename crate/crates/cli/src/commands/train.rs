use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fcc::data::{load_ranking_lists, prepare_lists, EmbeddingTable, Vocabulary};
use fcc::model::RankingModel;
use fcc::tensor::{Precision, Scalar};

use super::synth::write_synthetic;
use super::{create_dir, require_file};
use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::Common;

pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train.log";
pub const MANIFEST_FILE: &str = "manifest.json";

pub struct TrainedRun<S: Scalar> {
    pub model: RankingModel<S>,
    pub vocab: Vocabulary,
    /// Config with data paths made absolute and the vocabulary size filled in.
    pub config: RunConfig,
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

/// Checks every referenced input before any work starts.
pub(crate) fn check_inputs(cfg: &RunConfig) -> Result<()> {
    cfg.train.validate()?;
    if cfg.data.synthetic.is_none() && cfg.data.train.is_none() {
        return Err(fcc::Error::Config("data.train is required unless data.synthetic is set".into()).into());
    }
    if cfg.data.synthetic.is_none() {
        for (what, p) in [
            ("data.train", &cfg.data.train),
            ("data.valid", &cfg.data.valid),
            ("data.test", &cfg.data.test),
        ] {
            if let Some(p) = p {
                require_file(p, what)?;
            }
        }
    }
    if let Some(p) = &cfg.data.embeddings {
        require_file(p, "data.embeddings")?;
    }
    Ok(())
}

/// Materialises synthetic splits under `dir` and points the config at them.
fn materialise_data(cfg: &mut RunConfig, dir: &Path) -> Result<()> {
    if let Some(syn) = &cfg.data.synthetic {
        let splits = [
            ("train.tsv", syn.lists, syn.seed),
            ("valid.tsv", syn.valid_lists, syn.seed.wrapping_add(1)),
            ("test.tsv", syn.test_lists, syn.seed.wrapping_add(2)),
        ];
        let mut paths = Vec::new();
        for (name, size, seed) in splits {
            if size == 0 {
                paths.push(None);
                continue;
            }
            let path = dir.join(name);
            write_synthetic(&path, size, syn.signal, seed, &syn.generator)?;
            paths.push(Some(path));
        }
        cfg.data.train = paths[0].clone();
        cfg.data.valid = paths[1].clone();
        cfg.data.test = paths[2].clone();
    }
    for p in [
        &mut cfg.data.train,
        &mut cfg.data.valid,
        &mut cfg.data.test,
        &mut cfg.data.embeddings,
    ]
    .into_iter()
    .flatten()
    {
        *p = absolute(p)?;
    }
    Ok(())
}

pub(crate) fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in vocab.tokens() {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocabulary::from_tokens(text.lines().map(str::to_string).collect()))
}

/// Trains into `dir`: manifest, resolved config, vocabulary, log and checkpoint.
pub(crate) fn run_training<S: Scalar>(cfg: &RunConfig, dir: &Path, command: &str) -> Result<TrainedRun<S>> {
    check_inputs(cfg)?;
    create_dir(dir)?;
    let seed = cfg.train.seed;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = RunManifest::new(command, cfg, seed, cfg.precision.as_str(), cfg.threads)?;
    manifest.write(&manifest_path)?;

    let mut cfg = cfg.clone();
    materialise_data(&mut cfg, dir)?;
    let limits = cfg.model.limits;
    let load = |p: &Option<PathBuf>| -> Result<Vec<_>> {
        match p {
            Some(p) => Ok(load_ranking_lists(p, &limits)?),
            None => Ok(Vec::new()),
        }
    };
    let train_raw = load(&cfg.data.train)?;
    let valid_raw = load(&cfg.data.valid)?;
    for p in [&cfg.data.train, &cfg.data.valid, &cfg.data.test, &cfg.data.embeddings]
        .into_iter()
        .flatten()
    {
        manifest.checksum(p)?;
    }

    let vocab = Vocabulary::build(&train_raw, cfg.data.min_count)?;
    cfg.model.vocab_size = vocab.len();
    cfg.model.validate()?;
    let embeddings = match &cfg.data.embeddings {
        Some(path) => {
            let base = RankingModel::<S>::new(&cfg.model, seed, None)?.embedding_table()?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Some(EmbeddingTable::read_text(BufReader::new(file), &vocab, &base)?)
        }
        None => None,
    };
    let mut model = RankingModel::<S>::new(&cfg.model, seed, embeddings.as_ref())?;
    let train_lists = prepare_lists(&train_raw, &vocab, &limits)?;
    let valid_lists = prepare_lists(&valid_raw, &vocab, &limits)?;

    let vocab_path = dir.join(VOCAB_FILE);
    write_vocab(&vocab_path, &vocab)?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, toml::to_string(&cfg)?)?;
    manifest.config = serde_json::to_value(&cfg)?;

    let log_path = dir.join(LOG_FILE);
    let model_path = dir.join(MODEL_FILE);
    let mut log = BufWriter::new(File::create(&log_path)?);
    let outcome = fcc::train::train(
        &mut model,
        &train_lists,
        &valid_lists,
        &cfg.train,
        &mut log,
        Some(&model_path),
    );
    log.flush()?;
    let outcome = outcome?;
    model.save(&model_path)?;
    if let Some(best) = outcome.best {
        eprintln!(
            "{}: best valid R10@1 {:.4} at step {} (epoch {})",
            cfg.model.variant, best.r10_1, best.step, best.epoch
        );
    }

    for p in [&config_path, &vocab_path, &log_path, &model_path] {
        manifest.output(p.clone());
    }
    manifest.finish(&manifest_path)?;
    Ok(TrainedRun {
        model,
        vocab,
        config: cfg,
    })
}

pub fn train(common: &Common) -> Result<()> {
    let cfg = common.run_config()?;
    let out = common.out()?;
    match cfg.precision {
        Precision::F32 => run_training::<f32>(&cfg, out, "train").map(drop),
        Precision::F64 => run_training::<f64>(&cfg, out, "train").map(drop),
    }
}
