//! Ranked query vocabulary and per-region search signatures.
//!
//! A signature is the vector of a region's counts for each vocabulary query,
//! scaled to sum to 100. Construction runs in four passes over a
//! [`QueryLog`]:
//!
//! 1. [`top_queries_per_region`] keeps each region's `K_top` most frequent
//!    queries with at least `C_min` occurrences.
//! 2. [`build_vocabulary`] ranks queries by how many regions' top sets
//!    contain them and keeps the first `V`.
//! 3. [`Vectorizer`] turns each region's in-vocabulary counts into a
//!    signature; [`sparsity_filter`] demotes mostly-zero signatures.
//! 4. [`median_fill`] estimates absent signatures from observed neighbours
//!    in the same county, falling back to state and then national medians.
//!
//! All ties are broken by ascending query text so results never depend on
//! input order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codes::{CountyFips, RegionCode};
use crate::error::{Error, Result};
use crate::io::QueryLog;
use crate::spatial::RegionHierarchy;
use crate::stats::median_in_place;

/// Signatures are scaled to this total.
pub const SIGNATURE_TOTAL: f64 = 100.0;

/// Pipeline constants for one signature dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Free-form label of the log's time window, e.g. `2022-07`.
    pub time_window: String,
    pub vocab_size: usize,
    pub per_region_top: usize,
    pub min_count: u64,
    pub sparsity_threshold: f64,
    pub seed: u64,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            time_window: String::new(),
            vocab_size: 1000,
            per_region_top: 500,
            min_count: 20,
            sparsity_threshold: 0.98,
            seed: 0,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 || self.per_region_top < 1 {
            return Err(Error::BadParameter(
                "vocab size and per-region top must be at least 1".into(),
            ));
        }
        if !(self.sparsity_threshold > 0.0 && self.sparsity_threshold < 1.0) {
            return Err(Error::BadParameter(format!(
                "sparsity threshold {} outside (0, 1)",
                self.sparsity_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub feature_index: usize,
    pub query_text: String,
    /// Number of regions whose top set contains the query.
    pub region_coverage: u64,
    /// Occurrences over the whole log.
    pub total_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
}

impl Vocabulary {
    /// Validates ordering and indices.
    pub fn new(entries: Vec<VocabEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.feature_index != i {
                return Err(Error::BadParameter(format!(
                    "vocabulary entry {i} has feature index {}",
                    e.feature_index
                )));
            }
        }
        let ordered = entries.windows(2).all(|w| {
            let key = |e: &VocabEntry| (std::cmp::Reverse(e.region_coverage), std::cmp::Reverse(e.total_count));
            (key(&w[0]), &w[0].query_text) < (key(&w[1]), &w[1].query_text)
        });
        if !ordered {
            return Err(Error::BadParameter("vocabulary not in rank order".into()));
        }
        Ok(Vocabulary { entries })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.query_text.as_str())
    }
}

/// Each region's top `k_top` queries with `count >= c_min`, as indices into
/// the log's query table, best first.
pub fn top_queries_per_region(
    log: &QueryLog,
    k_top: usize,
    c_min: u64,
) -> BTreeMap<RegionCode, Vec<u32>> {
    log.regions()
        .map(|(region, pairs)| {
            let mut kept: Vec<(u32, u64)> =
                pairs.iter().copied().filter(|&(_, c)| c >= c_min).collect();
            // query index order is lexicographic order
            kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            kept.truncate(k_top);
            (*region, kept.into_iter().map(|(q, _)| q).collect())
        })
        .collect()
}

/// Ranks every query that appears in some top set.
pub fn build_vocabulary(
    top_sets: &BTreeMap<RegionCode, Vec<u32>>,
    log: &QueryLog,
    vocab_size: usize,
) -> Result<Vocabulary> {
    if top_sets.is_empty() {
        return Err(Error::EmptyInput("top-query sets"));
    }
    let n_queries = log.queries().len();
    let mut coverage = vec![0u64; n_queries];
    for set in top_sets.values() {
        for &q in set {
            coverage[q as usize] += 1;
        }
    }
    let mut totals = vec![0u64; n_queries];
    for (_, pairs) in log.regions() {
        for &(q, c) in pairs {
            totals[q as usize] += c;
        }
    }
    let mut ranked: Vec<u32> = (0..n_queries as u32)
        .filter(|&q| coverage[q as usize] > 0)
        .collect();
    if ranked.is_empty() {
        return Err(Error::EmptyInput("no region has a qualifying query"));
    }
    ranked.sort_unstable_by(|&a, &b| {
        let (a, b) = (a as usize, b as usize);
        coverage[b]
            .cmp(&coverage[a])
            .then(totals[b].cmp(&totals[a]))
            .then(a.cmp(&b))
    });
    ranked.truncate(vocab_size);
    Ok(Vocabulary {
        entries: ranked
            .into_iter()
            .enumerate()
            .map(|(i, q)| VocabEntry {
                feature_index: i,
                query_text: log.query(q).to_string(),
                region_coverage: coverage[q as usize],
                total_count: totals[q as usize],
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureStatus {
    Observed,
    MedianFilled,
    Absent,
}

impl fmt::Display for SignatureStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignatureStatus::Observed => "observed",
            SignatureStatus::MedianFilled => "median_filled",
            SignatureStatus::Absent => "absent",
        })
    }
}

impl FromStr for SignatureStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(SignatureStatus::Observed),
            "median_filled" => Ok(SignatureStatus::MedianFilled),
            "absent" => Ok(SignatureStatus::Absent),
            _ => Err(Error::BadParameter(format!("unknown signature status `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSignature {
    pub region_id: RegionCode,
    pub values: Vec<f64>,
    pub status: SignatureStatus,
}

/// Scales `values` in place to sum to [`SIGNATURE_TOTAL`]; returns false and
/// leaves them untouched when the sum is zero.
fn normalize(values: &mut [f64]) -> bool {
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        return false;
    }
    values.iter_mut().for_each(|v| *v = *v * SIGNATURE_TOTAL / sum);
    true
}

fn from_raw(region_id: RegionCode, mut values: Vec<f64>) -> SearchSignature {
    let status = if normalize(&mut values) {
        SignatureStatus::Observed
    } else {
        SignatureStatus::Absent
    };
    SearchSignature {
        region_id,
        values,
        status,
    }
}

/// Signature of one region from `(query text, count)` pairs. Queries outside
/// the vocabulary are ignored.
pub fn vectorize_region<'a, I>(region_id: RegionCode, counts: I, vocab: &Vocabulary) -> SearchSignature
where
    I: IntoIterator<Item = (&'a str, u64)>,
{
    let lookup: HashMap<&str, usize> = vocab
        .entries
        .iter()
        .map(|e| (e.query_text.as_str(), e.feature_index))
        .collect();
    let mut raw = vec![0.0; vocab.len()];
    for (q, c) in counts {
        if let Some(&i) = lookup.get(q) {
            raw[i] += c as f64;
        }
    }
    from_raw(region_id, raw)
}

/// Maps a log's query indices onto vocabulary features for bulk use.
pub struct Vectorizer {
    feature_of: Vec<Option<u32>>,
    dim: usize,
}

impl Vectorizer {
    pub fn new(vocab: &Vocabulary, log: &QueryLog) -> Self {
        let mut feature_of = vec![None; log.queries().len()];
        for e in vocab.entries() {
            if let Some(q) = log.query_index(&e.query_text) {
                feature_of[q as usize] = Some(e.feature_index as u32);
            }
        }
        Vectorizer {
            feature_of,
            dim: vocab.len(),
        }
    }

    pub fn vectorize(&self, region_id: RegionCode, pairs: &[(u32, u64)]) -> SearchSignature {
        let mut raw = vec![0.0; self.dim];
        for &(q, c) in pairs {
            if let Some(i) = self.feature_of[q as usize] {
                raw[i as usize] += c as f64;
            }
        }
        from_raw(region_id, raw)
    }
}

pub fn zero_fraction(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    values.iter().filter(|&&v| v == 0.0).count() as f64 / values.len() as f64
}

/// Returns whether the signature is valid; a signature with a zero fraction
/// strictly above `threshold` is demoted to absent (and zeroed).
pub fn sparsity_filter(sig: &mut SearchSignature, threshold: f64) -> bool {
    if zero_fraction(&sig.values) > threshold {
        sig.status = SignatureStatus::Absent;
        sig.values.iter_mut().for_each(|v| *v = 0.0);
        false
    } else {
        true
    }
}

/// Dense row-major signatures for a sorted list of regions.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    dim: usize,
    regions: Vec<RegionCode>,
    status: Vec<SignatureStatus>,
    values: Vec<f64>,
}

impl SignatureSet {
    pub fn new(dim: usize) -> Self {
        SignatureSet {
            dim,
            regions: Vec::new(),
            status: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Collects signatures, sorting them by region.
    pub fn from_signatures(dim: usize, mut sigs: Vec<SearchSignature>) -> Result<Self> {
        sigs.sort_by(|a, b| a.region_id.cmp(&b.region_id));
        let mut set = SignatureSet::new(dim);
        set.values.reserve(dim * sigs.len());
        for s in sigs {
            set.push(s.region_id, s.status, &s.values)?;
        }
        Ok(set)
    }

    /// Appends a region; regions must arrive in strictly ascending order.
    pub fn push(&mut self, region: RegionCode, status: SignatureStatus, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::LengthMismatch(values.len(), self.dim));
        }
        if let Some(last) = self.regions.last() {
            if *last >= region {
                return Err(Error::DuplicateKey(region.to_string(), "signatures".into()));
            }
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::BadParameter(format!(
                "signature {region} has a negative or non-finite entry"
            )));
        }
        self.regions.push(region);
        self.status.push(status);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[RegionCode] {
        &self.regions
    }

    pub fn position(&self, region: &RegionCode) -> Option<usize> {
        self.regions.binary_search(region).ok()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn status(&self, i: usize) -> SignatureStatus {
        self.status[i]
    }

    pub fn get(&self, region: &RegionCode) -> Option<(&[f64], SignatureStatus)> {
        self.position(region).map(|i| (self.row(i), self.status[i]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (RegionCode, SignatureStatus, &[f64])> {
        self.regions
            .iter()
            .zip(&self.status)
            .zip(self.values.chunks_exact(self.dim.max(1)))
            .map(|((r, s), v)| (*r, *s, v))
    }

    pub fn count(&self, status: SignatureStatus) -> usize {
        self.status.iter().filter(|&&s| s == status).count()
    }

    fn set_row(&mut self, i: usize, status: SignatureStatus, values: &[f64]) {
        self.status[i] = status;
        self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(values);
    }
}

/// Per-feature medians over the given rows, or `None` when `rows` is empty.
fn feature_medians(set: &SignatureSet, rows: &[usize]) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return None;
    }
    let mut column = vec![0.0; rows.len()];
    Some(
        (0..set.dim)
            .map(|j| {
                for (slot, &i) in column.iter_mut().zip(rows) {
                    *slot = set.values[i * set.dim + j];
                }
                median_in_place(&mut column)
            })
            .collect(),
    )
}

/// Replaces every absent signature with per-feature medians of the observed
/// signatures in its county, else its state, else the whole set. Filled
/// vectors are rescaled to sum to 100; an all-zero fill stays absent.
///
/// Every region of `set` must be a zip of `hierarchy`.
pub fn median_fill(set: &mut SignatureSet, hierarchy: &RegionHierarchy) -> Result<()> {
    let mut by_county: HashMap<CountyFips, Vec<usize>> = HashMap::new();
    let mut by_state: HashMap<crate::codes::StateFips, Vec<usize>> = HashMap::new();
    let mut national = Vec::new();
    for (i, region) in set.regions.iter().enumerate() {
        let z = hierarchy
            .zip(region)
            .ok_or_else(|| Error::UnknownRegion(region.to_string()))?;
        if set.status[i] == SignatureStatus::Observed {
            by_county.entry(z.county).or_default().push(i);
            by_state.entry(z.state).or_default().push(i);
            national.push(i);
        }
    }
    let absent: Vec<usize> = (0..set.len())
        .filter(|&i| set.status[i] == SignatureStatus::Absent)
        .collect();
    if absent.is_empty() {
        return Ok(());
    }

    let mut county_cache: HashMap<CountyFips, Option<Vec<f64>>> = HashMap::new();
    let mut state_cache: HashMap<crate::codes::StateFips, Option<Vec<f64>>> = HashMap::new();
    let mut national_cache: Option<Option<Vec<f64>>> = None;
    let empty = Vec::new();
    for i in absent {
        let z = hierarchy.zip(&set.regions[i]).expect("checked above");
        let county = county_cache
            .entry(z.county)
            .or_insert_with(|| feature_medians(set, by_county.get(&z.county).unwrap_or(&empty)))
            .clone();
        let fill = match county {
            Some(v) => v,
            None => match state_cache
                .entry(z.state)
                .or_insert_with(|| feature_medians(set, by_state.get(&z.state).unwrap_or(&empty)))
                .clone()
            {
                Some(v) => v,
                None => national_cache
                    .get_or_insert_with(|| feature_medians(set, &national))
                    .clone()
                    .ok_or(Error::NoObservedSignatures)?,
            },
        };
        let mut fill = fill;
        if normalize(&mut fill) {
            set.set_row(i, SignatureStatus::MedianFilled, &fill);
        }
    }
    Ok(())
}

/// Unweighted mean of each county's non-absent zip signatures.
pub fn aggregate_to_county(
    set: &SignatureSet,
    hierarchy: &RegionHierarchy,
) -> Result<BTreeMap<CountyFips, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for county in hierarchy.counties() {
        let mut sum = vec![0.0; set.dim];
        let mut n = 0usize;
        for &zi in &county.zips {
            let zip = &hierarchy.zips()[zi].zip;
            if let Some((row, status)) = set.get(zip) {
                if status != SignatureStatus::Absent {
                    sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyCounty(county.fips.to_string()));
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
        out.insert(county.fips, sum);
    }
    Ok(out)
}

/// Keeps the first `d` vocabulary-ranked features without rescaling.
pub fn truncate_features(set: &SignatureSet, d: usize) -> Result<SignatureSet> {
    if d == 0 || d > set.dim {
        return Err(Error::BadDimension { d, max: set.dim });
    }
    let mut out = SignatureSet::new(d);
    out.regions = set.regions.clone();
    out.status = set.status.clone();
    out.values = set
        .values
        .chunks_exact(set.dim)
        .flat_map(|row| row[..d].iter().copied())
        .collect();
    Ok(out)
}

/// Runs the full pipeline for every zip of `hierarchy`. Zips without log rows
/// start out absent.
pub fn build_signatures(
    log: &QueryLog,
    manifest: &DatasetManifest,
    hierarchy: &RegionHierarchy,
) -> Result<(Vocabulary, SignatureSet)> {
    manifest.validate()?;
    if let Some((r, _)) = log.regions().find(|(r, _)| hierarchy.zip_index(r).is_none()) {
        return Err(Error::UnknownRegion(r.to_string()));
    }
    let top = top_queries_per_region(log, manifest.per_region_top, manifest.min_count);
    let vocab = build_vocabulary(&top, log, manifest.vocab_size)?;
    let set = vectorize_all(log, &vocab, hierarchy, manifest.sparsity_threshold)?;
    Ok((vocab, set))
}

/// Vectorizes, filters and median-fills with a fixed vocabulary.
pub fn vectorize_all(
    log: &QueryLog,
    vocab: &Vocabulary,
    hierarchy: &RegionHierarchy,
    sparsity_threshold: f64,
) -> Result<SignatureSet> {
    if vocab.is_empty() {
        return Err(Error::EmptyInput("vocabulary"));
    }
    let vectorizer = Vectorizer::new(vocab, log);
    let mut set = SignatureSet::new(vocab.len());
    set.values.reserve(vocab.len() * hierarchy.len());
    for z in hierarchy.zips() {
        let mut sig = vectorizer.vectorize(z.zip, log.region(&z.zip).unwrap_or(&[]));
        sparsity_filter(&mut sig, sparsity_threshold);
        set.push(sig.region_id, sig.status, &sig.values)?;
    }
    median_fill(&mut set, hierarchy)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::QueryLogRecord;
    use crate::spatial::tests::zip;
    use proptest::prelude::*;

    fn rc(s: &str) -> RegionCode {
        s.parse().unwrap()
    }

    fn log_of(rows: &[(&str, &str, u64)]) -> QueryLog {
        QueryLog::from_records(rows.iter().map(|&(r, q, c)| QueryLogRecord {
            region_id: rc(r),
            query_text: q.into(),
            count: c,
        }))
        .unwrap()
    }

    fn names(log: &QueryLog, set: &[u32]) -> Vec<String> {
        set.iter().map(|&q| log.query(q).to_string()).collect()
    }

    /// A→{q1,q2}, B→{q1,q2}, C→{q4,q2}; totals q1:8, q2:8, q4:9.
    fn toy_world() -> QueryLog {
        log_of(&[
            ("00001", "q1", 5),
            ("00001", "q2", 4),
            ("00001", "q3", 1),
            ("00002", "q1", 3),
            ("00002", "q2", 2),
            ("00002", "q3", 2),
            ("00003", "q4", 9),
            ("00003", "q2", 2),
        ])
    }

    #[test]
    fn per_region_top_sets() {
        let log = toy_world();
        let top = top_queries_per_region(&log, 2, 2);
        assert_eq!(names(&log, &top[&rc("00001")]), ["q1", "q2"]);
        // q2 and q3 tie at 2 in region B; q2 wins lexicographically
        assert_eq!(names(&log, &top[&rc("00002")]), ["q1", "q2"]);
        let top = top_queries_per_region(&log, 2, 100);
        assert!(top.values().all(Vec::is_empty));
    }

    #[test]
    fn toy_vocabulary_order() {
        let log = toy_world();
        let top = top_queries_per_region(&log, 2, 2);
        let v = build_vocabulary(&top, &log, 3).unwrap();
        let got: Vec<(&str, u64, u64)> = v
            .entries()
            .iter()
            .map(|e| (e.query_text.as_str(), e.region_coverage, e.total_count))
            .collect();
        assert_eq!(got, [("q2", 3, 8), ("q1", 2, 8), ("q4", 1, 9)]);
        let v1 = build_vocabulary(&top, &log, 1).unwrap();
        assert_eq!(v1.queries().collect::<Vec<_>>(), ["q2"]);
        assert!(Vocabulary::new(v.entries().to_vec()).is_ok());
    }

    #[test]
    fn equal_coverage_and_total_breaks_on_text() {
        let log = log_of(&[("00001", "beta", 5), ("00001", "alpha", 5)]);
        let top = top_queries_per_region(&log, 5, 0);
        let v = build_vocabulary(&top, &log, 5).unwrap();
        assert_eq!(v.queries().collect::<Vec<_>>(), ["alpha", "beta"]);
        assert!(matches!(
            build_vocabulary(&BTreeMap::new(), &log, 5),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn vectorize_toy_region() {
        let log = toy_world();
        let v = build_vocabulary(&top_queries_per_region(&log, 2, 2), &log, 3).unwrap();
        let sig = vectorize_region(rc("00001"), [("q1", 5), ("q2", 4), ("q3", 1)], &v);
        assert_eq!(sig.status, SignatureStatus::Observed);
        let expect = [400.0 / 9.0, 500.0 / 9.0, 0.0];
        for (a, b) in sig.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((sig.values.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((sig.values[0] - 44.4444).abs() < 1e-4);

        let none = vectorize_region(rc("00009"), [("zzz", 7)], &v);
        assert_eq!(none.status, SignatureStatus::Absent);
        assert!(none.values.iter().all(|&x| x == 0.0));

        let single = vectorize_region(rc("00009"), [("q4", 3)], &v);
        assert_eq!(single.values, vec![0.0, 0.0, 100.0]);
    }

    #[test]
    fn sparsity_boundary() {
        let mut values = vec![0.0; 1000];
        for v in values.iter_mut().take(15) {
            *v = 1.0;
        }
        let mut s = SearchSignature { region_id: rc("00001"), values, status: SignatureStatus::Observed };
        assert!(!sparsity_filter(&mut s, 0.98));
        assert_eq!(s.status, SignatureStatus::Absent);

        let mut values = vec![0.0; 1000];
        for v in values.iter_mut().take(20) {
            *v = 5.0;
        }
        let mut s = SearchSignature { region_id: rc("00001"), values, status: SignatureStatus::Observed };
        assert!(sparsity_filter(&mut s, 0.98));
        assert_eq!(s.status, SignatureStatus::Observed);

        let mut dense = SearchSignature { region_id: rc("00001"), values: vec![1.0; 10], status: SignatureStatus::Observed };
        assert!(sparsity_filter(&mut dense, 0.98));
    }

    fn hierarchy_for(zs: &[(&str, &str)]) -> RegionHierarchy {
        RegionHierarchy::new(zs.iter().map(|(z, c)| zip(z, c, 40.0, -90.0, 10)).collect()).unwrap()
    }

    #[test]
    fn median_fill_county_then_state() {
        let h = hierarchy_for(&[
            ("00001", "17001"),
            ("00002", "17001"),
            ("00003", "17001"),
            ("00004", "17001"),
            ("00005", "17003"),
        ]);
        let obs = SignatureStatus::Observed;
        let mut set = SignatureSet::new(2);
        set.push(rc("00001"), obs, &[100.0, 0.0]).unwrap();
        set.push(rc("00002"), obs, &[0.0, 100.0]).unwrap();
        set.push(rc("00003"), obs, &[60.0, 40.0]).unwrap();
        set.push(rc("00004"), SignatureStatus::Absent, &[0.0, 0.0]).unwrap();
        set.push(rc("00005"), SignatureStatus::Absent, &[0.0, 0.0]).unwrap();
        median_fill(&mut set, &h).unwrap();
        assert_eq!(set.get(&rc("00004")).unwrap(), (&[60.0, 40.0][..], SignatureStatus::MedianFilled));
        // county 17003 has no observed zips: state 17 medians are the same three
        assert_eq!(set.get(&rc("00005")).unwrap().0, &[60.0, 40.0]);
    }

    #[test]
    fn median_fill_rescales() {
        let h = hierarchy_for(&[("00001", "17001"), ("00002", "17001"), ("00003", "17001")]);
        let obs = SignatureStatus::Observed;
        let mut set = SignatureSet::new(3);
        set.push(rc("00001"), obs, &[50.0, 20.0, 30.0]).unwrap();
        set.push(rc("00002"), obs, &[50.0, 40.0, 10.0]).unwrap();
        set.push(rc("00003"), SignatureStatus::Absent, &[0.0; 3]).unwrap();
        median_fill(&mut set, &h).unwrap();
        // medians [50, 30, 20] already sum to 100
        assert_eq!(set.get(&rc("00003")).unwrap().0, &[50.0, 30.0, 20.0]);

        let mut fill = vec![50.0, 30.0];
        assert!(normalize(&mut fill));
        assert_eq!(fill, vec![62.5, 37.5]);
    }

    #[test]
    fn median_fill_without_observations_fails() {
        let h = hierarchy_for(&[("00001", "17001")]);
        let mut set = SignatureSet::new(2);
        set.push(rc("00001"), SignatureStatus::Absent, &[0.0, 0.0]).unwrap();
        assert!(matches!(median_fill(&mut set, &h), Err(Error::NoObservedSignatures)));
    }

    #[test]
    fn county_means() {
        let h = hierarchy_for(&[
            ("00001", "17001"),
            ("00002", "17001"),
            ("00003", "17003"),
            ("00004", "17003"),
            ("00005", "17003"),
            ("00006", "17003"),
        ]);
        let obs = SignatureStatus::Observed;
        let mut set = SignatureSet::new(2);
        set.push(rc("00001"), obs, &[100.0, 0.0]).unwrap();
        set.push(rc("00002"), obs, &[0.0, 100.0]).unwrap();
        set.push(rc("00003"), obs, &[90.0, 10.0]).unwrap();
        set.push(rc("00004"), obs, &[80.0, 20.0]).unwrap();
        set.push(rc("00005"), obs, &[70.0, 30.0]).unwrap();
        set.push(rc("00006"), SignatureStatus::Absent, &[0.0, 0.0]).unwrap();
        let agg = aggregate_to_county(&set, &h).unwrap();
        assert_eq!(agg[&rc("17001")], vec![50.0, 50.0]);
        let c = &agg[&rc("17003")];
        assert!((c[0] - 80.0).abs() < 1e-12 && (c[1] - 20.0).abs() < 1e-12);

        let h2 = hierarchy_for(&[("00001", "17001")]);
        let mut s2 = SignatureSet::new(1);
        s2.push(rc("00001"), SignatureStatus::Absent, &[0.0]).unwrap();
        assert!(matches!(aggregate_to_county(&s2, &h2), Err(Error::EmptyCounty(_))));
    }

    #[test]
    fn truncation() {
        let mut set = SignatureSet::new(3);
        set.push(rc("00001"), SignatureStatus::Observed, &[400.0 / 9.0, 500.0 / 9.0, 0.0]).unwrap();
        assert_eq!(truncate_features(&set, 3).unwrap(), set);
        assert_eq!(truncate_features(&set, 1).unwrap().row(0), &[400.0 / 9.0]);
        assert_eq!(truncate_features(&set, 2).unwrap().row(0), &[400.0 / 9.0, 500.0 / 9.0]);
        assert!(matches!(truncate_features(&set, 0), Err(Error::BadDimension { .. })));
        assert!(matches!(truncate_features(&set, 4), Err(Error::BadDimension { .. })));
    }

    proptest! {
        #[test]
        fn signatures_are_scale_invariant(
            counts in proptest::collection::vec(0u64..50, 6),
            factor in 1u64..20,
        ) {
            let rows: Vec<(String, u64)> = counts.iter().enumerate().map(|(i, c)| (format!("q{i}"), *c)).collect();
            let entries: Vec<VocabEntry> = (0..6).map(|i| VocabEntry {
                feature_index: i,
                query_text: format!("q{i}"),
                region_coverage: 10 - i as u64,
                total_count: 1,
            }).collect();
            let v = Vocabulary::new(entries).unwrap();
            let a = vectorize_region(rc("00001"), rows.iter().map(|(q, c)| (q.as_str(), *c)), &v);
            let b = vectorize_region(rc("00001"), rows.iter().map(|(q, c)| (q.as_str(), c * factor)), &v);
            prop_assert_eq!(a.status, b.status);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            if a.status == SignatureStatus::Observed {
                prop_assert!((a.values.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            }
        }

        #[test]
        fn aggregating_identical_vectors_is_identity(
            v in proptest::collection::vec(0.0f64..100.0, 1..8), n in 1usize..5,
        ) {
            let zs: Vec<(String, &str)> = (0..n).map(|i| (format!("{:05}", i), "17001")).collect();
            let h = RegionHierarchy::new(zs.iter().map(|(z, c)| zip(z, c, 40.0, -90.0, 1)).collect()).unwrap();
            let mut set = SignatureSet::new(v.len());
            for (z, _) in &zs {
                set.push(rc(z), SignatureStatus::Observed, &v).unwrap();
            }
            let agg = aggregate_to_county(&set, &h).unwrap();
            for (a, b) in agg[&rc("17001")].iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
