use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{file_label, parse_code, parse_rows, read_text, write_atomic};
use crate::codes::RegionCode;
use crate::error::{Error, Result};

pub const QUERY_LOG_HEADER: [&str; 3] = ["region_id", "query_text", "count"];

/// One owned row of a query-count log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryLogRecord {
    pub region_id: RegionCode,
    pub query_text: String,
    pub count: u64,
}

/// Borrowed view of one log row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry<'a> {
    pub region_id: RegionCode,
    pub query_text: &'a str,
    pub count: u64,
}

/// A validated query-count log in canonical order.
///
/// Query strings are interned once in ascending order, so a query's index is
/// also its lexicographic rank. Each region keeps `(query index, count)`
/// pairs sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryLog {
    queries: Vec<String>,
    regions: BTreeMap<RegionCode, Vec<(u32, u64)>>,
}

/// Trims and lowercases query text.
pub fn canonical_query(text: &str) -> String {
    text.trim().to_lowercase()
}

impl QueryLog {
    /// Builds a log from interned parts. `queries` must be strictly ascending
    /// and every region's pairs strictly ascending by index.
    pub fn from_parts(
        queries: Vec<String>,
        regions: BTreeMap<RegionCode, Vec<(u32, u64)>>,
    ) -> Result<Self> {
        if queries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadParameter("query table not strictly ascending".into()));
        }
        for (region, pairs) in &regions {
            if pairs.windows(2).any(|w| w[0].0 >= w[1].0)
                || pairs.iter().any(|&(q, _)| q as usize >= queries.len())
            {
                return Err(Error::BadParameter(format!(
                    "region {region}: query indices unsorted or out of range"
                )));
            }
        }
        Ok(QueryLog { queries, regions })
    }

    pub fn from_records<I: IntoIterator<Item = QueryLogRecord>>(records: I) -> Result<Self> {
        let mut raw: BTreeMap<RegionCode, BTreeMap<String, u64>> = BTreeMap::new();
        for rec in records {
            let q = canonical_query(&rec.query_text);
            if q.is_empty() {
                return Err(Error::BadParameter("empty query text".into()));
            }
            let slot = raw.entry(rec.region_id).or_default();
            if slot.contains_key(&q) {
                return Err(Error::DuplicateKey(rec.region_id.to_string(), q));
            }
            slot.insert(q, rec.count);
        }
        Ok(Self::intern(raw))
    }

    fn intern(raw: BTreeMap<RegionCode, BTreeMap<String, u64>>) -> Self {
        let mut queries: Vec<String> = raw.values().flat_map(|m| m.keys().cloned()).collect();
        queries.sort();
        queries.dedup();
        let index: HashMap<&str, u32> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.as_str(), i as u32))
            .collect();
        let regions = raw
            .iter()
            .map(|(r, m)| {
                // BTreeMap iteration is already in query order
                let pairs = m.iter().map(|(q, &c)| (index[q.as_str()], c)).collect();
                (*r, pairs)
            })
            .collect();
        QueryLog { queries, regions }
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn query(&self, idx: u32) -> &str {
        &self.queries[idx as usize]
    }

    /// Index of a canonical query string.
    pub fn query_index(&self, text: &str) -> Option<u32> {
        self.queries
            .binary_search_by(|q| q.as_str().cmp(text))
            .ok()
            .map(|i| i as u32)
    }

    pub fn regions(&self) -> impl Iterator<Item = (&RegionCode, &[(u32, u64)])> {
        self.regions.iter().map(|(r, v)| (r, v.as_slice()))
    }

    pub fn region(&self, id: &RegionCode) -> Option<&[(u32, u64)]> {
        self.regions.get(id).map(Vec::as_slice)
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn len(&self) -> usize {
        self.regions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All rows in canonical order (region, then query text).
    pub fn iter(&self) -> impl Iterator<Item = LogEntry<'_>> {
        self.regions.iter().flat_map(move |(r, pairs)| {
            pairs.iter().map(move |&(q, count)| LogEntry {
                region_id: *r,
                query_text: &self.queries[q as usize],
                count,
            })
        })
    }
}

/// Reads `region_id,query_text,count`. Counts below any threshold are kept;
/// thresholds apply later, per region.
pub fn load_query_log(path: &Path) -> Result<QueryLog> {
    let text = read_text(path)?;
    let file = file_label(path);
    let rows = parse_rows(&text, &file, &QUERY_LOG_HEADER)?;
    let mut raw: BTreeMap<RegionCode, BTreeMap<String, u64>> = BTreeMap::new();
    for row in rows {
        let region: RegionCode = parse_code(&file, row.line, row.fields[0])?;
        let query = canonical_query(row.fields[1]);
        if query.is_empty() {
            return Err(super::malformed(&file, row.line, "empty query text"));
        }
        let count: u64 = row.fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::NonNumericCount {
                file: file.clone(),
                line: row.line,
            })?;
        let slot = raw.entry(region).or_default();
        if slot.contains_key(&query) {
            return Err(Error::DuplicateKey(region.to_string(), query));
        }
        slot.insert(query, count);
    }
    Ok(QueryLog::intern(raw))
}

pub fn write_query_log(log: &QueryLog, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(24 * (log.len() + 1));
    out.push_str(&QUERY_LOG_HEADER.join(","));
    out.push('\n');
    for e in log.iter() {
        out.push_str(e.region_id.as_str());
        out.push(',');
        out.push_str(e.query_text);
        out.push(',');
        out.push_str(&e.count.to_string());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
