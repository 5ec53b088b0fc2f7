//! Canonical ranking-list TSV.
//!
//! Each row is `label<TAB>turn_1 __EOT__ turn_2 ...<TAB>candidate<TAB>provenance`
//! and every ten consecutive rows form one list sharing the same context.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{tokenize, Candidate, Limits, RankingList, LIST_SIZE};
use crate::error::{Error, Result};

pub const TURN_SEPARATOR: &str = "__EOT__";

struct Row {
    line: usize,
    label: bool,
    context: String,
    candidate: String,
    provenance: String,
}

fn parse_row(line_no: usize, line: &str) -> Result<Row> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(Error::Data(format!(
            "line {line_no}: expected 4 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let label = match fields[0].trim() {
        "1" => true,
        "0" => false,
        other => {
            return Err(Error::Data(format!("line {line_no}: label must be 0 or 1, got `{other}`")))
        }
    };
    Ok(Row {
        line: line_no,
        label,
        context: fields[1].to_string(),
        candidate: fields[2].to_string(),
        provenance: fields[3].to_string(),
    })
}

fn build_list(index: usize, rows: &[Row], limits: &Limits) -> Result<RankingList> {
    let first = &rows[0];
    if let Some(r) = rows.iter().find(|r| r.context != first.context) {
        return Err(Error::Data(format!(
            "list {index} (line {}): context differs from line {}",
            r.line, first.line
        )));
    }
    let positives: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.label).map(|(i, _)| i).collect();
    if positives.len() != 1 {
        return Err(Error::Data(format!(
            "list {index} (line {}): expected exactly one positive, found {}",
            first.line,
            positives.len()
        )));
    }
    let context: Vec<Vec<String>> = first
        .context
        .split(TURN_SEPARATOR)
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect();
    if context.is_empty() {
        return Err(Error::Data(format!("list {index} (line {}): empty context", first.line)));
    }
    let candidates = rows
        .iter()
        .map(|r| Candidate {
            text: tokenize(&r.candidate),
            provenance: tokenize(&r.provenance),
        })
        .collect();
    let mut list = RankingList {
        context,
        candidates,
        positive: positives[0],
    };
    list.truncate(limits);
    Ok(list)
}

/// Parses canonical TSV into validated, truncated ranking lists.
pub fn read_ranking_lists(reader: impl BufRead, limits: &Limits) -> Result<Vec<RankingList>> {
    let mut lists = Vec::new();
    let mut group: Vec<Row> = Vec::with_capacity(LIST_SIZE);
    let mut last_line = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        last_line = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        group.push(parse_row(i + 1, line)?);
        if group.len() == LIST_SIZE {
            lists.push(build_list(lists.len(), &group, limits)?);
            group.clear();
        }
    }
    if !group.is_empty() {
        return Err(Error::Data(format!(
            "list {} (line {}): has {} rows, expected {LIST_SIZE} (file ends at line {last_line})",
            lists.len(),
            group[0].line,
            group.len()
        )));
    }
    Ok(lists)
}

pub fn load_ranking_lists(path: impl AsRef<Path>, limits: &Limits) -> Result<Vec<RankingList>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_ranking_lists(BufReader::new(file), limits)
}

/// Writes lists in canonical form; tokens are joined by single spaces.
pub fn write_ranking_lists<'a>(
    mut w: impl Write,
    lists: impl IntoIterator<Item = &'a RankingList>,
) -> Result<()> {
    for list in lists {
        let context = list
            .context
            .iter()
            .map(|t| t.join(" "))
            .collect::<Vec<_>>()
            .join(&format!(" {TURN_SEPARATOR} "));
        for (k, c) in list.candidates.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                u8::from(k == list.positive),
                context,
                c.text.join(" "),
                c.provenance.join(" ")
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: u8, context: &str, cand: &str) -> String {
        format!("{label}\t{context}\t{cand}\tsome title\n")
    }

    fn list_text(context: &str, positive: usize) -> String {
        (0..LIST_SIZE)
            .map(|k| row(u8::from(k == positive), context, &format!("answer number {k}")))
            .collect()
    }

    #[test]
    fn twenty_rows_make_two_lists() {
        let text = list_text("hello there __EOT__ how are you", 3) + &list_text("second dialogue", 0);
        let lists = read_ranking_lists(text.as_bytes(), &Limits::default()).unwrap();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].positive, 3);
        assert_eq!(lists[0].context, vec![vec!["hello", "there"], vec!["how", "are", "you"]]);
        assert_eq!(lists[1].candidates[9].provenance, vec!["some", "title"]);
    }

    #[test]
    fn double_positive_is_rejected_with_list_index() {
        let mut text = list_text("first", 0);
        let mut second = list_text("second", 1);
        second = second.replacen("0\tsecond", "1\tsecond", 1);
        text.push_str(&second);
        let err = read_ranking_lists(text.as_bytes(), &Limits::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("list 1") && msg.contains("found 2"), "{msg}");
    }

    #[test]
    fn short_list_is_rejected_with_line_number() {
        let text: String = list_text("ctx", 0).lines().take(7).map(|l| format!("{l}\n")).collect();
        let err = read_ranking_lists(text.as_bytes(), &Limits::default()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(err.to_string().contains("7 rows"));
    }

    #[test]
    fn empty_context_is_rejected() {
        let text = list_text(" __EOT__ ,, ", 0);
        assert!(read_ranking_lists(text.as_bytes(), &Limits::default()).is_err());
    }

    #[test]
    fn long_context_keeps_latest_ten_turns() {
        let context = (0..12).map(|i| format!("turn{i}")).collect::<Vec<_>>().join(" __EOT__ ");
        let lists = read_ranking_lists(list_text(&context, 0).as_bytes(), &Limits::default()).unwrap();
        let turns: Vec<String> = lists[0].context.iter().map(|t| t[0].clone()).collect();
        let want: Vec<String> = (2..12).map(|i| format!("turn{i}")).collect();
        assert_eq!(turns, want);
    }

    #[test]
    fn token_prefixes_are_kept() {
        let limits = Limits {
            max_candidate_len: 2,
            ..Limits::default()
        };
        let lists = read_ranking_lists(list_text("c", 0).as_bytes(), &limits).unwrap();
        assert_eq!(lists[0].candidates[4].text, vec!["answer", "number"]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let text = list_text("Hello, World! __EOT__ next", 5);
        let lists = read_ranking_lists(text.as_bytes(), &Limits::default()).unwrap();
        let mut buf = Vec::new();
        write_ranking_lists(&mut buf, &lists).unwrap();
        let again = read_ranking_lists(&buf[..], &Limits::default()).unwrap();
        assert_eq!(lists, again);
    }
}
