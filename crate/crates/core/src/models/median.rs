//! Hierarchical median imputation: county median, else state, else national.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::codes::{CountyFips, StateFips, ZipCode};
use crate::error::{Error, Result};
use crate::spatial::RegionHierarchy;
use crate::stats::median_in_place;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianModel {
    pub county_median: BTreeMap<CountyFips, f64>,
    pub state_median: BTreeMap<StateFips, f64>,
    pub national_median: f64,
}

/// Which level answered a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedianSource {
    County,
    State,
    National,
}

/// Fits medians over the given labeled training zips.
pub fn median_fit<I>(labels: I, hierarchy: &RegionHierarchy) -> Result<MedianModel>
where
    I: IntoIterator<Item = (ZipCode, f64)>,
{
    let mut by_county: HashMap<CountyFips, Vec<f64>> = HashMap::new();
    let mut by_state: HashMap<StateFips, Vec<f64>> = HashMap::new();
    let mut all = Vec::new();
    for (zip, v) in labels {
        let z = hierarchy
            .zip(&zip)
            .ok_or_else(|| Error::UnknownRegion(zip.to_string()))?;
        if !v.is_finite() {
            return Err(Error::NonFiniteInput("label"));
        }
        by_county.entry(z.county).or_default().push(v);
        by_state.entry(z.state).or_default().push(v);
        all.push(v);
    }
    if all.is_empty() {
        return Err(Error::NoLabels);
    }
    Ok(MedianModel {
        county_median: by_county
            .into_iter()
            .map(|(k, mut v)| (k, median_in_place(&mut v)))
            .collect(),
        state_median: by_state
            .into_iter()
            .map(|(k, mut v)| (k, median_in_place(&mut v)))
            .collect(),
        national_median: median_in_place(&mut all),
    })
}

impl MedianModel {
    pub fn predict_with_source(
        &self,
        zip: &ZipCode,
        hierarchy: &RegionHierarchy,
    ) -> Result<(f64, MedianSource)> {
        let z = hierarchy
            .zip(zip)
            .ok_or_else(|| Error::UnknownRegion(zip.to_string()))?;
        if let Some(&v) = self.county_median.get(&z.county) {
            return Ok((v, MedianSource::County));
        }
        if let Some(&v) = self.state_median.get(&z.state) {
            return Ok((v, MedianSource::State));
        }
        Ok((self.national_median, MedianSource::National))
    }

    pub fn predict(&self, zip: &ZipCode, hierarchy: &RegionHierarchy) -> Result<f64> {
        self.predict_with_source(zip, hierarchy).map(|(v, _)| v)
    }
}

pub fn median_predict(model: &MedianModel, zip: &ZipCode, hierarchy: &RegionHierarchy) -> Result<f64> {
    model.predict(zip, hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::tests::zip;

    fn z(s: &str) -> ZipCode {
        s.parse().unwrap()
    }

    fn world() -> RegionHierarchy {
        RegionHierarchy::new(vec![
            zip("00001", "17001", 40.0, -90.0, 1),
            zip("00002", "17001", 40.0, -90.0, 1),
            zip("00003", "17001", 40.0, -90.0, 1),
            zip("00004", "17003", 40.0, -90.0, 1),
            zip("00005", "17003", 40.0, -90.0, 1),
            zip("00006", "17005", 40.0, -90.0, 1),
            zip("00007", "18001", 40.0, -90.0, 1),
        ])
        .unwrap()
    }

    #[test]
    fn county_then_state_then_national() {
        let h = world();
        let m = median_fit(
            [(z("00001"), 1.0), (z("00002"), 2.0), (z("00003"), 10.0), (z("00004"), 1.0), (z("00005"), 3.0)],
            &h,
        )
        .unwrap();
        assert_eq!(m.predict(&z("00002"), &h).unwrap(), 2.0);
        assert_eq!(m.predict(&z("00005"), &h).unwrap(), 2.0);
        // 17005 unlabeled: state 17 median of {1,2,10,1,3} = 2
        assert_eq!(m.predict_with_source(&z("00006"), &h).unwrap(), (2.0, MedianSource::State));
        assert_eq!(m.predict_with_source(&z("00007"), &h).unwrap(), (2.0, MedianSource::National));
    }

    #[test]
    fn state_fallback_value() {
        let h = world();
        let m = median_fit([(z("00001"), 7.0), (z("00004"), 5.0), (z("00005"), 9.0)], &h).unwrap();
        assert_eq!(m.predict(&z("00006"), &h).unwrap(), 7.0);
    }

    #[test]
    fn no_labels() {
        assert!(matches!(median_fit([], &world()), Err(Error::NoLabels)));
    }
}
