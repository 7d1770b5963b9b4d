//! On-disk tables.
//!
//! Every table is comma-delimited UTF-8 with a mandatory header line, `\n`
//! line endings and no field quoting. Readers validate eagerly and report
//! the 1-based line number (the header is line 1) of the first bad row.
//! Writers are byte-stable: rows are emitted in canonical order and reals
//! are printed with six significant digits by [`fmt6`].

mod features;
mod geo;
mod labels;
mod query_log;
mod report;

use std::fs;
use std::path::Path;

pub use features::{read_signatures, read_vocabulary, write_signatures, write_vocabulary};
pub use geo::{
    read_geography, read_overlaps, read_split, write_geography, write_overlaps, write_split,
};
pub use labels::{load_labels, write_labels, LabelLevel, LabelTable};
pub use query_log::{load_query_log, write_query_log, LogEntry, QueryLog, QueryLogRecord};
pub use report::{read_report, write_report};

use crate::error::{Error, Result};

/// Formats a real with six significant digits, keeping trailing zeros.
///
/// Magnitudes in `[1e-4, 1e6)` are printed positionally (`0.500000`,
/// `44.4444`, `100.000`); others in exponent form (`1.23457e+07`).
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00000".to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

/// Rounds through [`fmt6`]; handy for comparing values that went to disk.
pub fn round6(x: f64) -> f64 {
    fmt6(x).parse().expect("fmt6 output parses")
}

pub(crate) struct Row<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Splits `text` into header-checked rows of exactly `header.len()` fields.
/// `header` may end with a `*` entry, meaning "one or more further columns".
pub(crate) fn parse_rows<'a>(text: &'a str, file: &str, header: &[&str]) -> Result<Vec<Row<'a>>> {
    let mut lines = text.split('\n').enumerate();
    let expected = header.join(",");
    let (_, head) = lines.next().ok_or_else(|| Error::BadHeader {
        file: file.to_string(),
        expected: expected.clone(),
    })?;
    let head = head.strip_suffix('\r').unwrap_or(head);
    let open_ended = header.last() == Some(&"*");
    let fixed = if open_ended { &header[..header.len() - 1] } else { header };
    let head_fields: Vec<&str> = head.split(',').collect();
    let header_ok = if open_ended {
        head_fields.len() > fixed.len() && head_fields[..fixed.len()] == *fixed
    } else {
        head_fields == fixed
    };
    if !header_ok {
        return Err(Error::BadHeader {
            file: file.to_string(),
            expected,
        });
    }
    let width = head_fields.len();
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        if raw.contains('"') {
            return Err(malformed(file, line, "quoted fields are not supported"));
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != width {
            return Err(malformed(
                file,
                line,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

pub(crate) fn malformed(file: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        file: file.to_string(),
        line,
        reason: reason.into(),
    }
}

pub(crate) fn parse_code<T: std::str::FromStr>(file: &str, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| malformed(file, line, format!("bad region code `{s}`")))
}

pub(crate) fn parse_real(file: &str, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| malformed(file, line, format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue {
            file: file.to_string(),
            line,
        });
    }
    Ok(v)
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes a two-column `region_id,value` table sorted by region.
pub(crate) fn write_value_table<'a, I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (String, f64)>,
{
    let mut rows: Vec<(String, f64)> = rows.into_iter().collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::with_capacity(16 * (rows.len() + 1));
    out.push_str(header);
    out.push('\n');
    for (id, v) in rows {
        out.push_str(&id);
        out.push(',');
        out.push_str(&fmt6(v));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.5), "0.500000");
        assert_eq!(fmt6(44.444444444), "44.4444");
        assert_eq!(fmt6(100.0), "100.000");
        assert_eq!(fmt6(-1.47), "-1.47000");
        assert_eq!(fmt6(0.0), "0.00000");
        assert_eq!(fmt6(12345678.0), "1.23457e+07");
        assert_eq!(fmt6(0.00001234), "1.23400e-05");
        assert_eq!(fmt6(0.0001234), "0.000123400");
        assert_eq!(fmt6(999999.7), "1.00000e+06");
        assert_eq!(fmt6(9.999996), "10.0000");
    }

    #[test]
    fn rows_carry_line_numbers() {
        let text = "a,b\n1,2\n\n3,4\n";
        let rows = parse_rows(text, "t.csv", &["a", "b"]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].line, 4);
        assert!(matches!(
            parse_rows("a,b\n1\n", "t.csv", &["a", "b"]),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            parse_rows("x,b\n", "t.csv", &["a", "b"]),
            Err(Error::BadHeader { .. })
        ));
    }

    #[test]
    fn open_ended_header() {
        let rows = parse_rows("id,f0,f1\n1,2,3\n", "t", &["id", "*"]).unwrap();
        assert_eq!(rows[0].fields, vec!["1", "2", "3"]);
        assert!(parse_rows("id\n", "t", &["id", "*"]).is_err());
    }
}
