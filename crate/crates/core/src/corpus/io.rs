//! File formats: JSON-lines documents, TSV dictionary, CSV template records
//! and the JSON-lines masked corpus.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CorpusError, MaskedPassage, RawDocument, DEFAULT_SOURCE};

#[derive(Debug, Deserialize)]
struct SentenceLine {
    doc_id: String,
    year: Option<u32>,
    sent_idx: usize,
    text: String,
    #[serde(default)]
    source: Option<String>,
}

/// Reads one-sentence-per-line JSON documents and groups them by `doc_id`,
/// ordering sentences by `sent_idx`. Output is in ascending doc id order.
pub fn read_documents<R: BufRead>(input: R) -> Result<Vec<RawDocument>, CorpusError> {
    let mut grouped: BTreeMap<String, (Option<u32>, String, BTreeMap<usize, String>)> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse { line: i + 1, message };
        let rec: SentenceLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.year == Some(0) {
            return Err(parse_err("year must be positive".into()));
        }
        let source = rec.source.unwrap_or_else(|| DEFAULT_SOURCE.to_string());
        let entry = grouped
            .entry(rec.doc_id.clone())
            .or_insert_with(|| (rec.year, source, BTreeMap::new()));
        if entry.0 != rec.year {
            return Err(parse_err(format!("document `{}` has conflicting years", rec.doc_id)));
        }
        if entry.2.insert(rec.sent_idx, rec.text).is_some() {
            return Err(parse_err(format!(
                "document `{}` repeats sentence index {}",
                rec.doc_id, rec.sent_idx
            )));
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(doc_id, (year, source, sents))| RawDocument {
            doc_id,
            year,
            sentences: sents.into_values().collect(),
            source,
        })
        .collect())
}

#[derive(Serialize)]
struct SentenceOut<'a> {
    doc_id: &'a str,
    year: Option<u32>,
    sent_idx: usize,
    text: &'a str,
    #[serde(skip_serializing_if = "is_default_source")]
    source: &'a str,
}

fn is_default_source(s: &&str) -> bool {
    *s == DEFAULT_SOURCE
}

pub fn write_documents<W: Write>(out: &mut W, docs: &[RawDocument]) -> Result<(), CorpusError> {
    for d in docs {
        for (i, s) in d.sentences.iter().enumerate() {
            let rec = SentenceOut {
                doc_id: &d.doc_id,
                year: d.year,
                sent_idx: i,
                text: s,
                source: &d.source,
            };
            writeln!(out, "{}", serde_json::to_string(&rec).map_err(std::io::Error::other)?)?;
        }
    }
    Ok(())
}

pub fn write_masked_corpus<W: Write>(out: &mut W, passages: &[MaskedPassage]) -> Result<(), CorpusError> {
    for p in passages {
        writeln!(out, "{}", serde_json::to_string(p).map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

pub fn read_masked_corpus<R: BufRead>(input: R) -> Result<Vec<MaskedPassage>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Splits one CSV line, honouring double quotes (`""` escapes a quote).
pub fn split_csv_line(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.trim_end_matches('\r').chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if cur.trim().is_empty() => {
                cur.clear();
                quoted = true;
            }
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    fields.push(cur);
    Ok(fields)
}
