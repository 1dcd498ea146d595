//! JSON-Lines datasets: one `{"user_id", "item_id", "text", "rating"}`
//! object per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use half_core::corpus::RawRecord;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Largest tolerated share of malformed lines in an input file.
pub const MAX_MALFORMED_SHARE: f64 = 0.10;

#[derive(Debug, Serialize, Deserialize)]
struct Line<'a> {
    #[serde(borrow)]
    user_id: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    item_id: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    text: std::borrow::Cow<'a, str>,
    rating: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReadReport {
    pub records: Vec<RawRecord>,
    /// Non-blank lines seen.
    pub lines: usize,
    /// 1-based numbers of the lines that were skipped.
    pub malformed: Vec<usize>,
}

impl ReadReport {
    pub fn malformed_share(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.malformed.len() as f64 / self.lines as f64
        }
    }
}

fn parse_line(line: &str) -> Option<RawRecord> {
    let l: Line = serde_json::from_str(line).ok()?;
    if l.user_id.is_empty() || l.item_id.is_empty() || !l.rating.is_finite() {
        return None;
    }
    Some(RawRecord {
        user_id: l.user_id.into_owned(),
        item_id: l.item_id.into_owned(),
        text: l.text.into_owned(),
        rating: l.rating,
    })
}

/// Parses JSONL text, skipping blank lines and counting malformed ones.
pub fn parse_records(text: &str) -> ReadReport {
    let mut report = ReadReport::default();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_line(line) {
            Some(r) => report.records.push(r),
            None => report.malformed.push(k + 1),
        }
    }
    report
}

/// Reads a dataset file. More than [`MAX_MALFORMED_SHARE`] malformed lines
/// is an input-data error; fewer are reported on stderr and skipped.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let report = parse_records(&text);
    if report.malformed_share() > MAX_MALFORMED_SHARE {
        return Err(CliError::Data(format!(
            "{}: {} of {} lines are malformed",
            path.display(),
            report.malformed.len(),
            report.lines
        )));
    }
    if !report.malformed.is_empty() {
        eprintln!(
            "warning: {}: skipped {} malformed line(s), first at line {}",
            path.display(),
            report.malformed.len(),
            report.malformed[0]
        );
    }
    Ok(report.records)
}

pub fn record_to_line(r: &RawRecord) -> String {
    let line = Line {
        user_id: r.user_id.as_str().into(),
        item_id: r.item_id.as_str().into(),
        text: r.text.as_str().into(),
        rating: r.rating,
    };
    serde_json::to_string(&line).expect("plain strings and a finite float serialize")
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(record_to_line(r).as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io("cannot create", path, e))?;
    f.write_all(&buf).map_err(|e| CliError::io("cannot write", path, e))
}
