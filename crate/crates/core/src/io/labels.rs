use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{file_label, parse_code, parse_real, parse_rows, read_text, write_value_table};
use crate::codes::RegionCode;
use crate::error::{Error, Result};
use crate::spatial::RegionHierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLevel {
    Zip,
    County,
}

impl fmt::Display for LabelLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelLevel::Zip => "zip",
            LabelLevel::County => "county",
        })
    }
}

impl FromStr for LabelLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zip" => Ok(LabelLevel::Zip),
            "county" => Ok(LabelLevel::County),
            _ => Err(Error::BadParameter(format!("unknown label level `{s}`"))),
        }
    }
}

/// Observed values of one target variable at one geographic level.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub variable: String,
    pub level: LabelLevel,
    /// Documentation only.
    pub unit: String,
    pub values: BTreeMap<RegionCode, f64>,
    /// Rows whose value cell was empty.
    pub skipped: usize,
}

impl LabelTable {
    pub fn new(variable: impl Into<String>, level: LabelLevel) -> Self {
        LabelTable {
            variable: variable.into(),
            level,
            unit: String::new(),
            values: BTreeMap::new(),
            skipped: 0,
        }
    }

    pub fn get(&self, id: &RegionCode) -> Option<f64> {
        self.values.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Variable name implied by a `labels_<variable>.csv` or
/// `county_labels_<variable>.csv` file name.
pub fn variable_from_path(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let name = stem
        .strip_prefix("county_labels_")
        .or_else(|| stem.strip_prefix("labels_"))?;
    (!name.is_empty()).then(|| name.to_string())
}

/// Reads a `region_id,value` table. Empty value cells are skipped and
/// counted; every region must exist in `hierarchy` at `level`.
pub fn load_labels(
    path: &Path,
    level: LabelLevel,
    variable: Option<&str>,
    hierarchy: &RegionHierarchy,
) -> Result<LabelTable> {
    let text = read_text(path)?;
    let file = file_label(path);
    let variable = match variable {
        Some(v) => v.to_string(),
        None => variable_from_path(path).ok_or_else(|| {
            Error::BadParameter(format!("cannot infer variable name from {file}"))
        })?,
    };
    let mut table = LabelTable::new(variable, level);
    for row in parse_rows(&text, &file, &["region_id", "value"])? {
        let id: RegionCode = parse_code(&file, row.line, row.fields[0])?;
        let known = match level {
            LabelLevel::Zip => hierarchy.zip_index(&id).is_some(),
            LabelLevel::County => hierarchy.county(&id).is_some(),
        };
        if !known {
            return Err(Error::UnknownRegion(id.to_string()));
        }
        if row.fields[1].trim().is_empty() {
            table.skipped += 1;
            continue;
        }
        let v = parse_real(&file, row.line, row.fields[1])?;
        if table.values.insert(id, v).is_some() {
            return Err(Error::DuplicateKey(id.to_string(), table.variable.clone()));
        }
    }
    Ok(table)
}

pub fn write_labels(table: &LabelTable, path: &Path) -> Result<()> {
    if table.values.values().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("label value"));
    }
    write_value_table(
        path,
        "region_id,value",
        table.values.iter().map(|(k, v)| (k.to_string(), *v)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::tests::toy_hierarchy;
    use std::fs;

    fn labels_file(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("labels_income.csv");
        fs::write(&p, format!("region_id,value\n{body}")).unwrap();
        p
    }

    #[test]
    fn loads_and_skips_empty_cells() {
        let h = toy_hierarchy();
        let dir = tempfile::tempdir().unwrap();
        let t = load_labels(
            &labels_file(&dir, "10001,1.5\n10002,2\n10003,-4e1\n"),
            LabelLevel::Zip,
            None,
            &h,
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.variable, "income");
        assert_eq!(t.get(&"10003".parse().unwrap()), Some(-40.0));

        let t = load_labels(&labels_file(&dir, "10001,\n10002,3\n"), LabelLevel::Zip, None, &h)
            .unwrap();
        assert_eq!((t.len(), t.skipped), (1, 1));
    }

    #[test]
    fn rejects_unknown_and_non_finite() {
        let h = toy_hierarchy();
        let dir = tempfile::tempdir().unwrap();
        let err = load_labels(&labels_file(&dir, "99999,1.0\n"), LabelLevel::Zip, None, &h)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownRegion(ref r) if r == "99999"));
        let err = load_labels(&labels_file(&dir, "10001,inf\n"), LabelLevel::Zip, None, &h)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { line: 2, .. }));
        let err = load_labels(&labels_file(&dir, "10001,NaN\n"), LabelLevel::Zip, None, &h)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { line: 2, .. }));
        // zip code used as a county
        let err = load_labels(&labels_file(&dir, "10001,1\n"), LabelLevel::County, None, &h)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownRegion(_)));
    }

    #[test]
    fn round_trip() {
        let h = toy_hierarchy();
        let dir = tempfile::tempdir().unwrap();
        let mut t = LabelTable::new("income", LabelLevel::Zip);
        t.values.insert("10002".parse().unwrap(), 0.25);
        t.values.insert("10001".parse().unwrap(), -3.5);
        let p = dir.path().join("labels_income.csv");
        write_labels(&t, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "region_id,value\n10001,-3.50000\n10002,0.250000\n"
        );
        assert_eq!(load_labels(&p, LabelLevel::Zip, None, &h).unwrap(), t);
    }
}
