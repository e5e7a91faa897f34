use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::ContingencySummary;
use super::EvalError;
use crate::corpus::io::split_csv_line;

/// One labelled (query, answer) pair of a binary evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query: String,
    pub answer_id: String,
    pub label: bool,
    pub score: Option<f64>,
    pub year: Option<u32>,
}

/// Parses `query_text,answer_id,label[,score[,year]]` lines. A first line
/// starting with `query` is treated as a header. Blank lines are skipped.
pub fn parse_eval_set(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.trim_start().starts_with("query")) {
            continue;
        }
        let err = |m: String| EvalError::Parse { line: i + 1, message: m };
        let f = split_csv_line(line).map_err(err)?;
        if f.len() < 3 || f.len() > 5 {
            return Err(err(format!("expected 3 to 5 fields, got {}", f.len())));
        }
        let label = match f[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(format!("label must be 0 or 1, got `{other}`"))),
        };
        let opt = |j: usize| f.get(j).map(|s| s.trim()).filter(|s| !s.is_empty());
        let score = opt(3)
            .map(|s| s.parse::<f64>().map_err(|e| err(format!("bad score: {e}"))))
            .transpose()?;
        if score.is_some_and(|s| !s.is_finite()) {
            return Err(err("score must be finite".into()));
        }
        let year = opt(4)
            .map(|s| s.parse::<u32>().map_err(|e| err(format!("bad year: {e}"))))
            .transpose()?;
        out.push(EvalRecord {
            query: f[0].clone(),
            answer_id: f[1].trim().to_string(),
            label,
            score,
            year,
        });
    }
    Ok(out)
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_eval_set(records: &[EvalRecord]) -> String {
    let mut out = String::from("query,answer_id,label,score,year\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            quote(&r.query),
            quote(&r.answer_id),
            r.label as u8,
            r.score.map_or(String::new(), |s| format!("{s}")),
            r.year.map_or(String::new(), |y| y.to_string())
        );
    }
    out
}

/// Relative success at each distinct score used as a threshold, as CSV.
/// Undefined entries are left empty.
pub fn threshold_sweep_csv(scores: &[f64], labels: &[bool]) -> Result<String, EvalError> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut out = String::from("threshold,pred_pos,tp,pred_neg,fn_successes,rs,ci_low,ci_high\n");
    for t in thresholds {
        let s = ContingencySummary::at_threshold(scores, labels, t)?;
        let rs = super::RelativeSuccess::from_summary(s).ok();
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let _ = writeln!(
            out,
            "{t},{},{},{},{},{},{},{}",
            s.pred_pos,
            s.tp,
            s.pred_neg,
            s.fn_successes,
            fmt(rs.as_ref().map(|r| r.rs)),
            fmt(rs.as_ref().and_then(|r| r.ci).map(|c| c.0)),
            fmt(rs.as_ref().and_then(|r| r.ci).map(|c| c.1)),
        );
    }
    Ok(out)
}
