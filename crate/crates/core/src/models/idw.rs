//! Inverse distance weighting over zip centroids.

use serde::{Deserialize, Serialize};

use crate::codes::RegionCode;
use crate::error::{Error, Result};
use crate::spatial::{haversine_km, LatLon};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdwParams {
    pub power: f64,
    pub neighbors: usize,
    /// Distances below this (km) count as an exact hit.
    pub epsilon_km: f64,
}

impl Default for IdwParams {
    fn default() -> Self {
        IdwParams {
            power: 2.0,
            neighbors: 12,
            epsilon_km: 1e-6,
        }
    }
}

impl IdwParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::BadParameter(format!("IDW power {}", self.power)));
        }
        if self.neighbors < 1 {
            return Err(Error::BadParameter("IDW needs at least one neighbour".into()));
        }
        if !(self.epsilon_km > 0.0) {
            return Err(Error::BadParameter(format!("IDW epsilon {}", self.epsilon_km)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: RegionCode,
    pub location: LatLon,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct IdwModel {
    sites: Vec<Site>,
    unit: Vec<[f64; 3]>,
    params: IdwParams,
}

#[inline]
fn chord2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

impl IdwModel {
    /// Sites are sorted by id, which is the distance tie-break order.
    pub fn new(mut sites: Vec<Site>, params: IdwParams) -> Result<Self> {
        params.validate()?;
        if sites.iter().any(|s| !s.value.is_finite() || !s.location.is_valid()) {
            return Err(Error::NonFiniteInput("IDW site"));
        }
        sites.sort_by(|a, b| a.id.cmp(&b.id));
        let unit = sites.iter().map(|s| s.location.unit_vector()).collect();
        Ok(IdwModel {
            sites,
            unit,
            params,
        })
    }

    pub fn params(&self) -> &IdwParams {
        &self.params
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// The `k` nearest sites as `(site index, km)`, nearest first, ties by id.
    pub fn nearest(&self, q: LatLon) -> Vec<(usize, f64)> {
        let k = self.params.neighbors.min(self.sites.len());
        if k == 0 {
            return Vec::new();
        }
        let qu = q.unit_vector();
        // chord length is monotone in great-circle distance
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, u) in self.unit.iter().enumerate() {
            let d = chord2(&qu, u);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
        best.into_iter()
            .map(|(_, i)| (i, haversine_km(q, self.sites[i].location)))
            .collect()
    }

    pub fn predict(&self, q: LatLon) -> Result<f64> {
        let near = self.nearest(q);
        let Some(&(first, d0)) = near.first() else {
            return Err(Error::NoSites);
        };
        if d0 < self.params.epsilon_km {
            return Ok(self.sites[first].value);
        }
        let (mut num, mut den) = (0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(i, d) in &near {
            let w = d.powf(-self.params.power);
            let v = self.sites[i].value;
            num += w * v;
            den += w;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        // a convex combination; clamp away rounding drift
        Ok((num / den).clamp(lo, hi))
    }
}

/// Convenience wrapper for a single query.
pub fn idw_predict(model: &IdwModel, q: LatLon) -> Result<f64> {
    model.predict(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn site(id: &str, lat: f64, lon: f64, value: f64) -> Site {
        Site {
            id: id.parse().unwrap(),
            location: LatLon::new(lat, lon),
            value,
        }
    }

    /// Longitude offset (deg) on the equator that is `km` away from lon 0.
    fn lon_for_km(km: f64) -> f64 {
        (km / crate::spatial::EARTH_RADIUS_KM).to_degrees()
    }

    #[test]
    fn exact_hit_returns_site_value() {
        let m = IdwModel::new(
            vec![site("00001", 10.0, 10.0, 4.0), site("00002", 11.0, 10.0, 9.0)],
            IdwParams::default(),
        )
        .unwrap();
        assert_eq!(m.predict(LatLon::new(10.0, 10.0)).unwrap(), 4.0);
    }

    #[test]
    fn two_site_weighting() {
        let params = IdwParams { power: 2.0, neighbors: 2, epsilon_km: 1e-6 };
        let m = IdwModel::new(
            vec![site("00001", 0.0, lon_for_km(1.0), 0.0), site("00002", 0.0, -lon_for_km(2.0), 3.0)],
            params,
        )
        .unwrap();
        let p = m.predict(LatLon::new(0.0, 0.0)).unwrap();
        // (0·1 + 3·0.25) / 1.25
        assert!((p - 0.6).abs() < 1e-9, "{p}");
    }

    #[test]
    fn constant_field_is_reproduced() {
        let sites = (0..20).map(|i| site(&format!("{i:05}"), i as f64, -i as f64, 2.5)).collect();
        let m = IdwModel::new(sites, IdwParams::default()).unwrap();
        assert_eq!(m.predict(LatLon::new(3.3, -7.1)).unwrap(), 2.5);
    }

    #[test]
    fn equidistant_ties_prefer_smaller_id() {
        let params = IdwParams { neighbors: 1, ..Default::default() };
        let m = IdwModel::new(
            vec![site("00002", 0.0, 1.0, 2.0), site("00001", 0.0, -1.0, 1.0)],
            params,
        )
        .unwrap();
        assert_eq!(m.nearest(LatLon::new(0.0, 0.0))[0].0, 0);
        assert_eq!(m.predict(LatLon::new(0.0, 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn empty_and_bad_params() {
        let m = IdwModel::new(vec![], IdwParams::default()).unwrap();
        assert!(matches!(m.predict(LatLon::new(0.0, 0.0)), Err(Error::NoSites)));
        let bad = IdwParams { power: 0.0, ..Default::default() };
        assert!(IdwModel::new(vec![], bad).is_err());
    }

    proptest! {
        #[test]
        fn prediction_within_neighbour_range(
            values in proptest::collection::vec(-50.0f64..50.0, 3..30),
            q in (-60.0f64..60.0, -170.0f64..170.0),
            k in 1usize..8,
        ) {
            let sites: Vec<Site> = values.iter().enumerate()
                .map(|(i, v)| site(&format!("{i:05}"), (i as f64 * 7.3) % 120.0 - 60.0, (i as f64 * 31.7) % 340.0 - 170.0, *v))
                .collect();
            let m = IdwModel::new(sites, IdwParams { neighbors: k, ..Default::default() }).unwrap();
            let q = LatLon::new(q.0, q.1);
            let near = m.nearest(q);
            let lo = near.iter().map(|&(i, _)| m.sites()[i].value).fold(f64::INFINITY, f64::min);
            let hi = near.iter().map(|&(i, _)| m.sites()[i].value).fold(f64::NEG_INFINITY, f64::max);
            let p = m.predict(q).unwrap();
            prop_assert!(p >= lo && p <= hi);
        }

        #[test]
        fn moving_closer_pulls_toward_site(
            v0 in -10.0f64..10.0, v1 in -10.0f64..10.0,
            near_km in 10.0f64..400.0, shrink in 0.05f64..0.95,
        ) {
            let params = IdwParams { neighbors: 2, ..Default::default() };
            let m = IdwModel::new(
                vec![site("00001", 0.0, 0.0, v0), site("00002", 0.0, lon_for_km(1000.0), v1)],
                params,
            ).unwrap();
            let far = m.predict(LatLon::new(0.0, lon_for_km(near_km))).unwrap();
            let closer = m.predict(LatLon::new(0.0, lon_for_km(near_km * shrink))).unwrap();
            prop_assert!((closer - v0).abs() <= (far - v0).abs() + 1e-12);
        }
    }
}
