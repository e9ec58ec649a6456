//! Result tables as CSV with a `#`-prefixed metadata preamble.
//!
//! ```text
//! # estimator: unbiased
//! # master_seed: 1
//! ire_pct,estimate,ci_halfwidth,rmse,work_mean,work_ci_halfwidth
//! 25,0.03972911734,0.001135107321,0.006870351906,430.04,19.09937012
//! ```
//!
//! Numbers are rounded to ten significant digits and printed in their
//! shortest decimal form, so reading a file back reproduces the printed
//! values exactly.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::TableRow;

pub const HEADER: &str = "ire_pct,estimate,ci_halfwidth,rmse,work_mean,work_ci_halfwidth";
const SIGNIFICANT_DIGITS: usize = 10;

/// Rounds to ten significant digits and prints the shortest decimal that
/// parses back to the rounded value.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific notation parses");
    format!("{rounded}")
}

/// Writes metadata lines and rows. An empty row list is an error.
pub fn write_table<W: Write>(mut out: W, rows: &[TableRow], metadata: &[(String, String)]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    for (key, value) in metadata {
        writeln!(out, "# {key}: {value}")?;
    }
    writeln!(out, "{HEADER}")?;
    for r in rows {
        let fields = [
            r.ire_pct,
            r.estimate,
            r.ci_halfwidth,
            r.rmse,
            r.work_mean,
            r.work_ci_halfwidth,
        ];
        let line: Vec<String> = fields.iter().map(|&v| format_number(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Renders the table to a string.
pub fn render_table(rows: &[TableRow], metadata: &[(String, String)]) -> Result<String> {
    let mut buf = Vec::new();
    write_table(&mut buf, rows, metadata)?;
    Ok(String::from_utf8(buf).expect("table is UTF-8"))
}

/// Writes the table to `path`, replacing any existing file.
pub fn emit_csv(rows: &[TableRow], metadata: &[(String, String)], path: &Path) -> Result<()> {
    let text = render_table(rows, metadata)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Metadata pairs and rows read back from a table.
pub type ParsedTable = (Vec<(String, String)>, Vec<TableRow>);

/// Parses a table written by [`write_table`].
pub fn parse_table(text: &str) -> Result<ParsedTable> {
    let mut metadata = Vec::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (lineno, line) in text.lines().enumerate() {
        if let Some(meta) = line.strip_prefix("# ") {
            let (k, v) = meta
                .split_once(": ")
                .ok_or_else(|| Error::Csv(format!("line {}: metadata without `: `", lineno + 1)))?;
            metadata.push((k.to_string(), v.to_string()));
        } else if !seen_header {
            if line != HEADER {
                return Err(Error::Csv(format!("line {}: expected header, got `{line}`", lineno + 1)));
            }
            seen_header = true;
        } else if !line.is_empty() {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Csv(format!("line {}: {e}", lineno + 1)))?;
            if v.len() != 6 {
                return Err(Error::Csv(format!("line {}: expected 6 fields, got {}", lineno + 1, v.len())));
            }
            rows.push(TableRow {
                ire_pct: v[0],
                estimate: v[1],
                ci_halfwidth: v[2],
                rmse: v[3],
                work_mean: v[4],
                work_ci_halfwidth: v[5],
            });
        }
    }
    if !seen_header {
        return Err(Error::Csv("missing header".into()));
    }
    Ok((metadata, rows))
}
