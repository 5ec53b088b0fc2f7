use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fcc::eval::{average_precision, paired_t_test, read_scores, MetricsReport, ScoredList};

use super::create_dir;
use super::eval::SCORES_FILE;
use super::train::MANIFEST_FILE;
use crate::manifest::RunManifest;
use crate::Common;

pub const REPORT_FILE: &str = "report.txt";
const ALPHA: f64 = 0.05;

pub struct Run {
    pub name: String,
    pub lists: Vec<ScoredList>,
}

/// Per-list values whose mean is the named metric.
fn per_list(lists: &[ScoredList], metric: &str) -> Vec<f64> {
    lists
        .iter()
        .map(|l| match metric {
            "MAP" => {
                let relevant: Vec<bool> = (0..l.scores.len()).map(|k| k == l.positive).collect();
                average_precision(&l.scores, &relevant)
            }
            _ => {
                let k: usize = metric["R10@".len()..].parse().expect("metric name");
                f64::from(u8::from(l.rank() <= k))
            }
        })
        .collect()
}

const METRICS: [&str; 4] = ["R10@1", "R10@2", "R10@5", "MAP"];

fn check_aligned(runs: &[Run]) -> Result<()> {
    let first = &runs[0];
    for r in &runs[1..] {
        let same = r.lists.len() == first.lists.len()
            && r.lists.iter().zip(&first.lists).all(|(a, b)| a.id == b.id && a.positive == b.positive);
        if !same {
            return Err(fcc::Error::Data(format!(
                "runs `{}` and `{}` were not scored on the same lists",
                first.name, r.name
            ))
            .into());
        }
    }
    Ok(())
}

/// Comparison table marking significant gains over the first run, followed
/// by every pairwise test.
pub fn compare(runs: &[Run]) -> Result<String> {
    if runs.len() < 2 {
        return Err(fcc::Error::Config("a comparison needs at least two runs".into()).into());
    }
    check_aligned(runs)?;
    let width = runs.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
    let base = &runs[0];
    let mut s = String::new();
    let _ = write!(s, "{:<width$} {:>6}", "run", "lists");
    for m in METRICS {
        let _ = write!(s, " {m:>8}");
    }
    s.push('\n');
    for run in runs {
        let report = MetricsReport::new(&run.lists);
        let values = [report.r10_1, report.r10_2, report.r10_5, report.map];
        let _ = write!(s, "{:<width$} {:>6}", run.name, report.lists);
        for (m, v) in METRICS.iter().zip(values) {
            let better = !std::ptr::eq(run, base) && {
                let t = paired_t_test(&per_list(&run.lists, m), &per_list(&base.lists, m))?;
                t.p < ALPHA && t.mean_diff > 0.0
            };
            let _ = write!(s, " {:>7.4}{}", v, if better { '*' } else { ' ' });
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "\n* significantly better than {} (paired t-test, p < {ALPHA})\n",
        base.name
    );
    let _ = writeln!(s, "pairwise paired t-tests over per-list values");
    let _ = writeln!(
        s,
        "{:<width$} {:<width$} {:<6} {:>10} {:>10} {:>10} sig",
        "a", "b", "metric", "mean_diff", "t", "p"
    );
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            for m in ["R10@1", "MAP"] {
                let t = paired_t_test(&per_list(&a.lists, m), &per_list(&b.lists, m))?;
                let _ = writeln!(
                    s,
                    "{:<width$} {:<width$} {:<6} {:>10.4} {:>10.4} {:>10.4} {}",
                    a.name,
                    b.name,
                    m,
                    t.mean_diff,
                    t.t,
                    t.p,
                    if t.p < ALPHA { "*" } else { "" }
                );
            }
        }
    }
    Ok(s)
}

fn scores_in(dir: &Path) -> Result<PathBuf> {
    [dir.join(SCORES_FILE), dir.join("eval").join(SCORES_FILE)]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| fcc::Error::Data(format!("no {SCORES_FILE} in {} or its eval/", dir.display())).into())
}

fn run_name(dir: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    match name(dir) {
        Some(n) if n == "eval" => dir.parent().and_then(name).unwrap_or(n),
        Some(n) => n,
        None => dir.display().to_string(),
    }
}

pub(crate) fn load_run(dir: &Path) -> Result<(Run, PathBuf)> {
    let path = scores_in(dir)?;
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let lists = read_scores(BufReader::new(file))?;
    Ok((
        Run {
            name: run_name(dir),
            lists,
        },
        path,
    ))
}

/// Writes `report.txt` and a manifest into `out` and returns the report.
pub(crate) fn write_comparison(dirs: &[PathBuf], out: &Path, command: &str, seed: u64) -> Result<String> {
    create_dir(out)?;
    let mut manifest = RunManifest::new(command, &serde_json::json!({ "runs": dirs }), seed, "n/a", 1)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let mut runs = Vec::new();
    let mut paths = Vec::new();
    for dir in dirs {
        let (run, path) = load_run(dir)?;
        runs.push(run);
        paths.push(path);
    }
    for p in &paths {
        manifest.checksum(p)?;
    }
    manifest.write(&manifest_path)?;
    let text = compare(&runs)?;
    let report_path = out.join(REPORT_FILE);
    std::fs::write(&report_path, &text).with_context(|| format!("writing {}", report_path.display()))?;
    manifest.output(report_path);
    manifest.finish(&manifest_path)?;
    Ok(text)
}

pub fn report(common: &Common, runs: &[PathBuf]) -> Result<()> {
    let out = common.out()?;
    let text = write_comparison(runs, out, "report", common.seed.unwrap_or(0))?;
    print!("{text}");
    Ok(())
}
