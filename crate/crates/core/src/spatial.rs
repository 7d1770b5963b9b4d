//! Geographic hierarchy, centroid distances and split generation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codes::{CountyFips, StateFips, ZipCode};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Mean Earth radius in km (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }

    /// Point on the unit sphere.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }
}

/// Great-circle distance in km.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipRecord {
    pub zip: ZipCode,
    pub county: CountyFips,
    pub state: StateFips,
    pub centroid: LatLon,
    pub population: u64,
    pub land_area_km2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub zip: ZipCode,
    pub county: CountyFips,
    pub overlap_km2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct County {
    pub fips: CountyFips,
    pub state: StateFips,
    /// Indices into [`RegionHierarchy::zips`], ascending.
    pub zips: Vec<usize>,
}

/// Zips, counties and states with a one-to-one zip→county mapping.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionHierarchy {
    zips: Vec<ZipRecord>,
    index: HashMap<ZipCode, usize>,
    counties: BTreeMap<CountyFips, County>,
    states: BTreeMap<StateFips, Vec<CountyFips>>,
}

/// Assigns each zip to the county with the largest positive overlap; ties go
/// to the smaller FIPS code.
pub fn derive_zip_to_county(
    zips: &[ZipCode],
    overlaps: &[Overlap],
) -> Result<BTreeMap<ZipCode, CountyFips>> {
    let mut best: BTreeMap<ZipCode, (f64, CountyFips)> = BTreeMap::new();
    for o in overlaps {
        if !o.overlap_km2.is_finite() {
            return Err(Error::NonFiniteInput("overlap_km2"));
        }
        if o.overlap_km2 <= 0.0 {
            continue;
        }
        best.entry(o.zip)
            .and_modify(|(area, county)| {
                if o.overlap_km2 > *area || (o.overlap_km2 == *area && o.county < *county) {
                    *area = o.overlap_km2;
                    *county = o.county;
                }
            })
            .or_insert((o.overlap_km2, o.county));
    }
    zips.iter()
        .map(|z| {
            best.get(z)
                .map(|&(_, c)| (*z, c))
                .ok_or_else(|| Error::NoOverlap(z.to_string()))
        })
        .collect()
}

impl RegionHierarchy {
    pub fn new(mut zips: Vec<ZipRecord>) -> Result<Self> {
        if zips.is_empty() {
            return Err(Error::EmptyInput("geography"));
        }
        zips.sort_by(|a, b| a.zip.cmp(&b.zip));
        if let Some(w) = zips.windows(2).find(|w| w[0].zip == w[1].zip) {
            return Err(Error::DuplicateKey(w[0].zip.to_string(), "geography".into()));
        }
        let mut counties: BTreeMap<CountyFips, County> = BTreeMap::new();
        let mut index = HashMap::with_capacity(zips.len());
        for (i, z) in zips.iter().enumerate() {
            if !z.centroid.is_valid() {
                return Err(Error::InconsistentHierarchy(format!(
                    "zip {} centroid out of range",
                    z.zip
                )));
            }
            if !(z.land_area_km2.is_finite() && z.land_area_km2 > 0.0) {
                return Err(Error::InconsistentHierarchy(format!(
                    "zip {} land area must be positive",
                    z.zip
                )));
            }
            index.insert(z.zip, i);
            let c = counties.entry(z.county).or_insert_with(|| County {
                fips: z.county,
                state: z.state,
                zips: Vec::new(),
            });
            if c.state != z.state {
                return Err(Error::InconsistentHierarchy(format!(
                    "county {} spans states {} and {}",
                    z.county, c.state, z.state
                )));
            }
            c.zips.push(i);
        }
        let mut states: BTreeMap<StateFips, Vec<CountyFips>> = BTreeMap::new();
        for c in counties.values() {
            states.entry(c.state).or_default().push(c.fips);
        }
        Ok(RegionHierarchy {
            zips,
            index,
            counties,
            states,
        })
    }

    /// Builds the hierarchy after replacing each zip's county with the one
    /// derived from `overlaps`.
    pub fn with_overlaps(mut zips: Vec<ZipRecord>, overlaps: &[Overlap]) -> Result<Self> {
        let known: BTreeSet<ZipCode> = zips.iter().map(|z| z.zip).collect();
        if let Some(o) = overlaps.iter().find(|o| !known.contains(&o.zip)) {
            return Err(Error::UnknownRegion(o.zip.to_string()));
        }
        let ids: Vec<ZipCode> = zips.iter().map(|z| z.zip).collect();
        let mapping = derive_zip_to_county(&ids, overlaps)?;
        for z in &mut zips {
            z.county = mapping[&z.zip];
        }
        Self::new(zips)
    }

    pub fn zips(&self) -> &[ZipRecord] {
        &self.zips
    }

    pub fn len(&self) -> usize {
        self.zips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zips.is_empty()
    }

    pub fn zip_index(&self, zip: &ZipCode) -> Option<usize> {
        self.index.get(zip).copied()
    }

    pub fn zip(&self, zip: &ZipCode) -> Option<&ZipRecord> {
        self.zip_index(zip).map(|i| &self.zips[i])
    }

    pub fn county(&self, fips: &CountyFips) -> Option<&County> {
        self.counties.get(fips)
    }

    pub fn counties(&self) -> impl Iterator<Item = &County> {
        self.counties.values()
    }

    pub fn n_counties(&self) -> usize {
        self.counties.len()
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateFips, &[CountyFips])> {
        self.states.iter().map(|(s, c)| (s, c.as_slice()))
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn county_of(&self, zip: &ZipCode) -> Option<CountyFips> {
        self.zip(zip).map(|z| z.county)
    }
}

/// Zips whose population is strictly greater than `threshold`.
pub fn population_filter(h: &RegionHierarchy, threshold: u64) -> BTreeSet<ZipCode> {
    h.zips()
        .iter()
        .filter(|z| z.population > threshold)
        .map(|z| z.zip)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Assignment {
    Fold(u32),
    Test,
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Fold(k) => write!(f, "F{k}"),
            Assignment::Test => f.write_str("TEST"),
        }
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "TEST" {
            return Ok(Assignment::Test);
        }
        s.strip_prefix('F')
            .and_then(|n| n.parse().ok())
            .map(Assignment::Fold)
            .ok_or_else(|| Error::BadParameter(format!("bad assignment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Random county holdout plus county-blocked CV folds.
    CountyHoldout,
    /// States dealt into folds; no holdout.
    StateGrouped,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::CountyHoldout => "county_holdout",
            SplitKind::StateGrouped => "state_grouped",
        })
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "county_holdout" => Ok(SplitKind::CountyHoldout),
            "state_grouped" => Ok(SplitKind::StateGrouped),
            _ => Err(Error::BadParameter(format!("unknown split kind `{s}`"))),
        }
    }
}

/// Seeded assignment of zips to CV folds or the holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub seed: u64,
    pub k: u32,
    pub holdout_frac: Option<f64>,
    pub holdout_counties: BTreeSet<CountyFips>,
    pub fold_of: BTreeMap<ZipCode, Assignment>,
    pub filter: Option<u64>,
}

impl SplitSpec {
    pub fn assignment(&self, zip: &ZipCode) -> Option<Assignment> {
        self.fold_of.get(zip).copied()
    }

    pub fn members(&self, a: Assignment) -> Vec<ZipCode> {
        self.fold_of
            .iter()
            .filter(|(_, &v)| v == a)
            .map(|(z, _)| *z)
            .collect()
    }

    /// Zips in any CV fold (everything except TEST).
    pub fn training_zips(&self) -> Vec<ZipCode> {
        self.fold_of
            .iter()
            .filter(|(_, v)| matches!(v, Assignment::Fold(_)))
            .map(|(z, _)| *z)
            .collect()
    }

    /// Keeps only the zips in `eligible`.
    pub fn restrict(&self, eligible: &BTreeSet<ZipCode>, filter: Option<u64>) -> SplitSpec {
        SplitSpec {
            fold_of: self
                .fold_of
                .iter()
                .filter(|(z, _)| eligible.contains(z))
                .map(|(z, a)| (*z, *a))
                .collect(),
            filter: filter.or(self.filter),
            ..self.clone()
        }
    }

    /// Checks fold ids are in range and that every county is coherent.
    pub fn validate(&self, h: &RegionHierarchy) -> Result<()> {
        let mut by_county: HashMap<CountyFips, Assignment> = HashMap::new();
        for (zip, a) in &self.fold_of {
            if let Assignment::Fold(f) = a {
                if *f >= self.k {
                    return Err(Error::BadParameter(format!("zip {zip}: fold {f} >= K={}", self.k)));
                }
            }
            let county = h
                .county_of(zip)
                .ok_or_else(|| Error::UnknownRegion(zip.to_string()))?;
            match by_county.insert(county, *a) {
                Some(prev) if prev != *a => {
                    return Err(Error::InconsistentHierarchy(format!(
                        "county {county} split across {prev} and {a}"
                    )))
                }
                _ => {}
            }
            if (*a == Assignment::Test) != self.holdout_counties.contains(&county)
                && self.kind == SplitKind::CountyHoldout
            {
                return Err(Error::InconsistentHierarchy(format!(
                    "zip {zip} assignment disagrees with holdout county list"
                )));
            }
        }
        Ok(())
    }
}

/// Random county holdout plus round-robin county-blocked CV folds.
pub fn county_holdout_split(
    h: &RegionHierarchy,
    seed: u64,
    holdout_frac: f64,
    k_folds: u32,
) -> Result<SplitSpec> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(Error::BadParameter(format!(
            "holdout fraction {holdout_frac} outside (0, 1)"
        )));
    }
    if k_folds < 2 {
        return Err(Error::BadParameter("need at least 2 folds".into()));
    }
    let n = h.n_counties();
    let n_test = (holdout_frac * n as f64 + 1e-9).floor() as usize;
    if n < k_folds as usize + 1 || n - n_test < k_folds as usize {
        return Err(Error::TooFewCounties {
            counties: n,
            folds: k_folds as usize,
        });
    }
    let mut counties: Vec<CountyFips> = h.counties().map(|c| c.fips).collect();
    SplitMix64::new(seed).shuffle(&mut counties);
    let mut county_assignment = HashMap::with_capacity(n);
    for (i, c) in counties.iter().enumerate() {
        let a = if i < n_test {
            Assignment::Test
        } else {
            Assignment::Fold(((i - n_test) % k_folds as usize) as u32)
        };
        county_assignment.insert(*c, a);
    }
    let fold_of = h
        .zips()
        .iter()
        .map(|z| (z.zip, county_assignment[&z.county]))
        .collect();
    Ok(SplitSpec {
        kind: SplitKind::CountyHoldout,
        seed,
        k: k_folds,
        holdout_frac: Some(holdout_frac),
        holdout_counties: counties[..n_test].iter().copied().collect(),
        fold_of,
        filter: None,
    })
}

/// Deals shuffled states round-robin into `k_folds` groups.
pub fn state_grouped_folds(h: &RegionHierarchy, seed: u64, k_folds: u32) -> Result<SplitSpec> {
    let groups = state_groups(h, seed, k_folds)?;
    let mut group_of = HashMap::new();
    for (g, states) in groups.iter().enumerate() {
        for s in states {
            group_of.insert(*s, g as u32);
        }
    }
    let fold_of = h
        .zips()
        .iter()
        .map(|z| (z.zip, Assignment::Fold(group_of[&z.state])))
        .collect();
    Ok(SplitSpec {
        kind: SplitKind::StateGrouped,
        seed,
        k: k_folds,
        holdout_frac: None,
        holdout_counties: BTreeSet::new(),
        fold_of,
        filter: None,
    })
}

/// The state groups behind [`state_grouped_folds`].
pub fn state_groups(h: &RegionHierarchy, seed: u64, k_folds: u32) -> Result<Vec<Vec<StateFips>>> {
    if k_folds < 2 {
        return Err(Error::BadParameter("need at least 2 folds".into()));
    }
    let mut states: Vec<StateFips> = h.states().map(|(s, _)| *s).collect();
    if states.len() < k_folds as usize {
        return Err(Error::TooFewStates {
            states: states.len(),
            folds: k_folds as usize,
        });
    }
    SplitMix64::new(seed).shuffle(&mut states);
    let mut groups = vec![Vec::new(); k_folds as usize];
    for (i, s) in states.into_iter().enumerate() {
        groups[i % k_folds as usize].push(s);
    }
    for g in &mut groups {
        g.sort();
    }
    Ok(groups)
}

/// County-blocked folds over an arbitrary subset of zips, used for tuning
/// inside a training set. Folds are capped at the number of counties present.
pub fn county_folds_for(
    h: &RegionHierarchy,
    zips: &[ZipCode],
    seed: u64,
    k_folds: u32,
) -> Result<Vec<u32>> {
    let mut counties: Vec<CountyFips> = zips
        .iter()
        .map(|z| h.county_of(z).ok_or_else(|| Error::UnknownRegion(z.to_string())))
        .collect::<Result<BTreeSet<_>>>()?
        .into_iter()
        .collect();
    let k = (k_folds as usize).min(counties.len());
    if k < 2 {
        return Err(Error::TooFewCounties {
            counties: counties.len(),
            folds: k_folds as usize,
        });
    }
    SplitMix64::new(seed).shuffle(&mut counties);
    let fold: HashMap<CountyFips, u32> = counties
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, (i % k) as u32))
        .collect();
    Ok(zips
        .iter()
        .map(|z| fold[&h.county_of(z).expect("checked above")])
        .collect())
}
