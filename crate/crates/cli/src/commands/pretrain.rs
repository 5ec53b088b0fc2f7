use std::collections::BTreeSet;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use fcc::data::{load_ranking_lists, pretrain_skipgram, RankingList, Vocabulary};

use super::{require_file, sidecar_manifest};
use crate::manifest::RunManifest;
use crate::Common;

/// One sentence per context turn, candidate text and distinct title.
fn sentences(lists: &[RankingList], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for list in lists {
        out.extend(list.context.iter().map(|t| vocab.encode_tokens(t)));
        out.extend(list.candidates.iter().map(|c| vocab.encode_tokens(&c.text)));
        let titles: BTreeSet<&Vec<String>> = list.candidates.iter().map(|c| &c.provenance).collect();
        out.extend(titles.into_iter().filter(|t| !t.is_empty()).map(|t| vocab.encode_tokens(t)));
    }
    out
}

pub fn pretrain_embeddings(common: &Common, input: Option<PathBuf>) -> Result<()> {
    let out = common.out()?;
    let cfg = common.run_config()?;
    let input = input
        .or_else(|| cfg.data.train.clone())
        .ok_or_else(|| fcc::Error::Config("no input: pass --input or set data.train".into()))?;
    require_file(&input, "input")?;
    let sg = cfg.skipgram.resolve(cfg.train.seed);

    let mut manifest = RunManifest::new("pretrain-embeddings", &cfg, cfg.train.seed, "f64", cfg.threads)?;
    manifest.checksum(&input)?;
    let manifest_path = sidecar_manifest(out);
    manifest.write(&manifest_path)?;

    let lists = load_ranking_lists(&input, &cfg.model.limits)?;
    let vocab = Vocabulary::build(&lists, cfg.data.min_count)?;
    let corpus = sentences(&lists, &vocab);
    let table = pretrain_skipgram(&corpus, vocab.len(), &sg)?;
    let mut w = BufWriter::new(std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    table.write_text(&mut w, &vocab)?;
    w.flush()?;
    eprintln!("wrote {} vectors of dim {}", vocab.len(), table.dim());
    manifest.output(out);
    manifest.finish(&manifest_path)
}
