//! Upstream export → canonical TSV.
//!
//! Input rows are `label<TAB>title<TAB>turn_1<TAB>..<TAB>turn_n<TAB>response`,
//! ten consecutive rows per list. A list with any unusable row is dropped
//! whole so the output stays aligned to lists.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};
use fcc::data::{LIST_SIZE, TURN_SEPARATOR};

use super::{require_file, sidecar_manifest};
use crate::manifest::RunManifest;
use crate::Common;

/// Largest tolerated share of skipped rows.
const MAX_SKIP_RATE: f64 = 0.10;

struct Row {
    label: bool,
    title: String,
    context: String,
    response: String,
}

fn clean(field: &str) -> String {
    field.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_row(line: &str) -> Result<Row, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 4 {
        return Err(format!("expected at least 4 fields, found {}", fields.len()));
    }
    let label = match fields[0].trim() {
        "1" => true,
        "0" => false,
        other => return Err(format!("label must be 0 or 1, got `{other}`")),
    };
    let turns: Vec<String> = fields[2..fields.len() - 1]
        .iter()
        .map(|t| clean(t))
        .filter(|t| !t.is_empty())
        .collect();
    if turns.is_empty() {
        return Err("no context turns".into());
    }
    let response = clean(fields[fields.len() - 1]);
    if response.is_empty() {
        return Err("empty response".into());
    }
    Ok(Row {
        label,
        title: clean(fields[1]),
        context: turns.join(&format!(" {TURN_SEPARATOR} ")),
        response,
    })
}

fn check_list(rows: &[Row]) -> Result<(), String> {
    let positives = rows.iter().filter(|r| r.label).count();
    if positives != 1 {
        return Err(format!("expected one positive, found {positives}"));
    }
    if rows.iter().any(|r| r.context != rows[0].context) {
        return Err("rows disagree on the context".into());
    }
    Ok(())
}

pub struct Converted {
    pub text: String,
    pub rows: usize,
    pub skipped: usize,
    pub missing_titles: usize,
}

pub fn convert_text(input: impl BufRead) -> Result<Converted> {
    let mut out = Converted {
        text: String::new(),
        rows: 0,
        skipped: 0,
        missing_titles: 0,
    };
    let lines: Vec<String> = input
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.trim().is_empty())
        .collect();
    for (li, chunk) in lines.chunks(LIST_SIZE).enumerate() {
        out.rows += chunk.len();
        let first_row = li * LIST_SIZE + 1;
        let parsed: Result<Vec<Row>, String> = chunk
            .iter()
            .enumerate()
            .map(|(i, l)| parse_row(l).map_err(|e| format!("row {}: {e}", first_row + i)))
            .collect();
        let checked = parsed.and_then(|rows| {
            if rows.len() != LIST_SIZE {
                return Err(format!("list at row {first_row} has only {} rows", rows.len()));
            }
            check_list(&rows).map_err(|e| format!("list at row {first_row}: {e}"))?;
            Ok(rows)
        });
        match checked {
            Ok(rows) => {
                for r in rows {
                    if r.title.is_empty() {
                        out.missing_titles += 1;
                    }
                    writeln!(out.text, "{}\t{}\t{}\t{}", u8::from(r.label), r.context, r.response, r.title)
                        .expect("writing to a string");
                }
            }
            Err(e) => {
                eprintln!("skipping {} rows: {e}", chunk.len());
                out.skipped += chunk.len();
            }
        }
    }
    Ok(out)
}

pub fn convert(common: &Common, input: &Path) -> Result<()> {
    let out_path = common.out()?;
    require_file(input, "input")?;
    let mut manifest = RunManifest::new("convert", &serde_json::json!({ "input": input }), 0, "n/a", 1)?;
    manifest.checksum(input)?;
    let manifest_path = sidecar_manifest(out_path);
    manifest.write(&manifest_path)?;

    let file = std::fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let converted = convert_text(BufReader::new(file))?;
    if converted.rows == 0 {
        return Err(fcc::Error::Data(format!("{} has no rows", input.display())).into());
    }
    let rate = converted.skipped as f64 / converted.rows as f64;
    if rate > MAX_SKIP_RATE {
        return Err(fcc::Error::Data(format!(
            "skipped {} of {} rows ({:.1}%), more than {:.0}% allowed",
            converted.skipped,
            converted.rows,
            100.0 * rate,
            100.0 * MAX_SKIP_RATE
        ))
        .into());
    }
    if converted.missing_titles > 0 {
        eprintln!(
            "warning: {} rows have no title; their provenance is empty",
            converted.missing_titles
        );
    }
    std::fs::write(out_path, &converted.text).with_context(|| format!("writing {}", out_path.display()))?;
    eprintln!(
        "converted {} rows, skipped {}",
        converted.rows - converted.skipped,
        converted.skipped
    );
    manifest.output(out_path);
    manifest.finish(&manifest_path)
}
