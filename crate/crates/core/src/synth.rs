//! Seeded synthetic worlds with known generative structure.
//!
//! A world is a set of states, counties and zips scattered over a CONUS-like
//! box, a query log whose per-zip propensities are driven by smooth latent
//! spatial factors, and labels whose relation to the resulting signatures is
//! known exactly. Labels are computed on the signatures the pipeline itself
//! builds from the generated log, so a label declared linear in signatures is
//! linear in what the models see.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codes::{CountyFips, RegionCode, StateFips, ZipCode, CONUS_STATE_FIPS};
use crate::error::{Error, Result};
use crate::io::{
    fmt6, write_atomic, write_geography, write_labels, write_overlaps, write_query_log,
    LabelLevel, LabelTable, QueryLog, QueryLogRecord,
};
use crate::rng::SplitMix64;
use crate::signature::{build_signatures, DatasetManifest, SignatureSet, VocabEntry, Vocabulary};
use crate::spatial::{LatLon, Overlap, RegionHierarchy, ZipRecord, EARTH_RADIUS_KM};
use crate::stats::{mean, variance};

const LAT_RANGE: (f64, f64) = (25.0, 49.0);
const LON_RANGE: (f64, f64) = (-124.0, -67.0);
const FOURIER_FEATURES: usize = 128;

/// A latent spatial factor: a squared-exponential random field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub length_scale_km: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    LinearInSignature,
    SpatialSmooth,
    StateShifted,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub kind: LabelKind,
    pub coef_seed: u64,
    /// Noise standard deviation in units of the signal's standard deviation.
    pub sigma: f64,
    /// Overrides `sigma` so that the best achievable R² is this value.
    #[serde(default)]
    pub target_r2: Option<f64>,
    /// Length scale of the field behind `spatial_smooth` labels.
    #[serde(default = "default_label_length_scale")]
    pub length_scale_km: f64,
    /// Standard deviation of per-state intercepts for `state_shifted` labels.
    #[serde(default = "default_state_shift")]
    pub state_shift_sd: f64,
}

fn default_label_length_scale() -> f64 {
    600.0
}

fn default_state_shift() -> f64 {
    1.0
}

impl LabelSpec {
    pub fn new(name: &str, kind: LabelKind, sigma: f64) -> Self {
        LabelSpec {
            name: name.to_string(),
            kind,
            coef_seed: 0,
            sigma,
            target_r2: None,
            length_scale_km: default_label_length_scale(),
            state_shift_sd: default_state_shift(),
        }
    }

    pub fn with_target_r2(mut self, r2: f64) -> Self {
        self.target_r2 = Some(r2);
        self
    }

    pub fn with_coef_seed(mut self, seed: u64) -> Self {
        self.coef_seed = seed;
        self
    }

    fn noise_sd(&self) -> f64 {
        match self.target_r2 {
            Some(r2) => ((1.0 - r2) / r2).sqrt(),
            None => self.sigma,
        }
    }
}

/// How per-zip query counts are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryModel {
    /// Size of the query universe.
    pub n_queries: usize,
    /// Expected queries per resident, before clamping to the volume range.
    pub volume_per_capita: f64,
    pub volume_min: f64,
    pub volume_max: f64,
    /// Exponent of the Zipf baseline popularity.
    pub zipf_exponent: f64,
    /// Standard deviation of query loadings on the latent factors.
    pub loading_sd: f64,
}

impl Default for QueryModel {
    fn default() -> Self {
        QueryModel {
            n_queries: 1200,
            volume_per_capita: 20.0,
            volume_min: 20_000.0,
            volume_max: 200_000.0,
            zipf_exponent: 0.6,
            loading_sd: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorldSpec {
    pub seed: u64,
    pub n_states: usize,
    pub n_counties: usize,
    pub n_zips: usize,
    pub factors: Vec<FactorSpec>,
    pub query: QueryModel,
    pub labels: Vec<LabelSpec>,
    /// Median of the log-normal population distribution.
    pub population_median: f64,
    pub population_log_sd: f64,
    /// Fraction of zips with no log rows at all.
    pub absent_rate: f64,
    /// Signature pipeline settings used to define the labels.
    pub manifest: DatasetManifest,
}

impl Default for SynthWorldSpec {
    fn default() -> Self {
        SynthWorldSpec {
            seed: 0,
            n_states: 49,
            n_counties: 400,
            n_zips: 2000,
            factors: vec![
                FactorSpec { length_scale_km: 2000.0, amplitude: 1.0 },
                FactorSpec { length_scale_km: 600.0, amplitude: 1.0 },
                FactorSpec { length_scale_km: 150.0, amplitude: 1.0 },
            ],
            query: QueryModel::default(),
            labels: vec![
                LabelSpec::new("linear", LabelKind::LinearInSignature, 0.0),
                LabelSpec::new("smooth", LabelKind::SpatialSmooth, 0.0),
            ],
            population_median: 3000.0,
            population_log_sd: 1.0,
            absent_rate: 0.02,
            manifest: DatasetManifest {
                vocab_size: 200,
                ..DatasetManifest::default()
            },
        }
    }
}

impl SynthWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.n_states < 1 || self.n_states > CONUS_STATE_FIPS.len() {
            return bad(format!("n_states {} outside 1..=49", self.n_states));
        }
        if !(self.n_zips >= self.n_counties && self.n_counties >= self.n_states) {
            return bad("need n_zips >= n_counties >= n_states".into());
        }
        if self.n_zips > 99_999 {
            return bad("at most 99999 zips".into());
        }
        if self.factors.iter().any(|f| !(f.length_scale_km > 0.0) || !(f.amplitude >= 0.0)) {
            return bad("factor length scales must be > 0 and amplitudes >= 0".into());
        }
        let q = &self.query;
        if q.n_queries < 1 || q.n_queries > 99_999 {
            return bad("query universe must hold 1..=99999 queries".into());
        }
        if !(q.volume_min > 0.0 && q.volume_min <= q.volume_max && q.volume_per_capita >= 0.0) {
            return bad("volume range must be positive and ordered".into());
        }
        if !(q.zipf_exponent >= 0.0 && q.loading_sd >= 0.0) {
            return bad("Zipf exponent and loading sd must be >= 0".into());
        }
        let mut names = BTreeSet::new();
        for l in &self.labels {
            if l.name.is_empty() || !l.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return bad(format!("label name `{}` must be [A-Za-z0-9_]+", l.name));
            }
            if !names.insert(&l.name) {
                return bad(format!("duplicate label `{}`", l.name));
            }
            if !(l.sigma >= 0.0) || l.target_r2.is_some_and(|r| !(r > 0.0 && r <= 1.0)) {
                return bad(format!("label `{}`: sigma must be >= 0 and target R² in (0, 1]", l.name));
            }
            if !(l.length_scale_km > 0.0 && l.state_shift_sd >= 0.0) {
                return bad(format!("label `{}`: bad field parameters", l.name));
            }
        }
        if !(self.population_median > 0.0 && self.population_log_sd >= 0.0) {
            return bad("population parameters".into());
        }
        if !(0.0..1.0).contains(&self.absent_rate) {
            return bad(format!("absent rate {} outside [0, 1)", self.absent_rate));
        }
        self.manifest
            .validate()
            .map_err(|e| Error::SpecInvalid(e.to_string()))
    }
}

/// Ground truth recorded for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOracle {
    pub name: String,
    pub kind: LabelKind,
    /// `y = intercept + coefficients · signature (+ state shift) + noise`
    /// for signature-driven kinds; empty otherwise.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub state_shifts: BTreeMap<StateFips, f64>,
    pub sigma: f64,
    /// `1 − σ²/Var(y)` over the generated zips.
    pub best_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub spec: SynthWorldSpec,
    pub vocab_size: usize,
    pub absent_zips: Vec<ZipCode>,
    pub labels: Vec<LabelOracle>,
}

impl Oracle {
    pub fn label(&self, name: &str) -> Option<&LabelOracle> {
        self.labels.iter().find(|l| l.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub hierarchy: RegionHierarchy,
    pub overlaps: Vec<Overlap>,
    pub log: QueryLog,
    pub vocabulary: Vocabulary,
    pub signatures: SignatureSet,
    pub zip_labels: Vec<LabelTable>,
    pub county_labels: Vec<LabelTable>,
    /// Latent factor values, one row per zip in hierarchy order.
    pub latent: Vec<Vec<f64>>,
    pub oracle: Oracle,
}

impl SynthWorld {
    pub fn zip_label(&self, name: &str) -> Option<&LabelTable> {
        self.zip_labels.iter().find(|l| l.variable == name)
    }

    pub fn county_label(&self, name: &str) -> Option<&LabelTable> {
        self.county_labels.iter().find(|l| l.variable == name)
    }
}

/// Random-Fourier-feature approximation of a unit-variance squared
/// exponential field over 3-D positions in km.
struct Field {
    omega: Vec<[f64; 3]>,
    phase: Vec<f64>,
    weight: Vec<f64>,
    amplitude: f64,
}

impl Field {
    fn draw(rng: &mut SplitMix64, length_scale_km: f64, amplitude: f64) -> Self {
        let mut omega = Vec::with_capacity(FOURIER_FEATURES);
        let mut phase = Vec::with_capacity(FOURIER_FEATURES);
        let mut weight = Vec::with_capacity(FOURIER_FEATURES);
        for _ in 0..FOURIER_FEATURES {
            let w: [f64; 3] =
                std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) / length_scale_km);
            omega.push(w);
            phase.push(rng.unit() * std::f64::consts::TAU);
            weight.push(rng.sample::<f64, _>(StandardNormal));
        }
        Field { omega, phase, weight, amplitude }
    }

    fn at(&self, p: LatLon) -> f64 {
        let u = p.unit_vector();
        let x = [u[0] * EARTH_RADIUS_KM, u[1] * EARTH_RADIUS_KM, u[2] * EARTH_RADIUS_KM];
        let s: f64 = self
            .omega
            .iter()
            .zip(&self.phase)
            .zip(&self.weight)
            .map(|((w, b), a)| a * (w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + b).cos())
            .sum();
        self.amplitude * s * (2.0 / FOURIER_FEATURES as f64).sqrt()
    }
}

fn uniform_point(rng: &mut SplitMix64) -> LatLon {
    LatLon::new(
        LAT_RANGE.0 + rng.unit() * (LAT_RANGE.1 - LAT_RANGE.0),
        LON_RANGE.0 + rng.unit() * (LON_RANGE.1 - LON_RANGE.0),
    )
}

fn jitter(rng: &mut SplitMix64, p: LatLon, deg: f64) -> LatLon {
    LatLon::new(
        (p.lat + (rng.unit() - 0.5) * deg).clamp(-90.0, 90.0),
        (p.lon + (rng.unit() - 0.5) * deg).clamp(-180.0, 180.0),
    )
}

fn chord2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Indices of the nearest and second-nearest centres.
fn two_nearest(p: &[f64; 3], centres: &[[f64; 3]]) -> (usize, Option<usize>) {
    let (mut best, mut second) = ((f64::INFINITY, 0), (f64::INFINITY, None));
    for (i, c) in centres.iter().enumerate() {
        let d = chord2(p, c);
        if d < best.0 {
            second = (best.0, (best.0.is_finite()).then_some(best.1));
            best = (d, i);
        } else if d < second.0 {
            second = (d, Some(i));
        }
    }
    (best.1, second.1)
}

fn lognormal(rng: &mut SplitMix64, median: f64, log_sd: f64) -> f64 {
    median * (log_sd * rng.sample::<f64, _>(StandardNormal)).exp()
}

struct Geography {
    zips: Vec<ZipRecord>,
    overlaps: Vec<Overlap>,
}

fn generate_geography(spec: &SynthWorldSpec, rng: &mut SplitMix64) -> Result<Geography> {
    let mut state_codes: Vec<&str> = CONUS_STATE_FIPS.to_vec();
    if spec.n_states < state_codes.len() {
        rng.shuffle(&mut state_codes);
        state_codes.truncate(spec.n_states);
        state_codes.sort_unstable();
    }
    let states: Vec<StateFips> = state_codes
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let state_centres: Vec<LatLon> = (0..states.len()).map(|_| uniform_point(rng)).collect();
    let state_units: Vec<[f64; 3]> = state_centres.iter().map(|p| p.unit_vector()).collect();

    let mut county_state = Vec::with_capacity(spec.n_counties);
    let mut county_centres = Vec::with_capacity(spec.n_counties);
    for i in 0..spec.n_counties {
        let (s, p) = if i < states.len() {
            (i, jitter(rng, state_centres[i], 1.0))
        } else {
            let p = uniform_point(rng);
            (two_nearest(&p.unit_vector(), &state_units).0, p)
        };
        county_state.push(s);
        county_centres.push(p);
    }
    let mut per_state = vec![0u64; states.len()];
    let mut county_fips: Vec<CountyFips> = Vec::with_capacity(spec.n_counties);
    for &s in &county_state {
        per_state[s] += 1;
        if per_state[s] > 999 {
            return Err(Error::SpecInvalid(format!("state {} has over 999 counties", states[s])));
        }
        county_fips.push(format!("{}{:03}", states[s], per_state[s]).parse()?);
    }
    let county_units: Vec<[f64; 3]> = county_centres.iter().map(|p| p.unit_vector()).collect();

    let mut zips = Vec::with_capacity(spec.n_zips);
    let mut overlaps = Vec::with_capacity(spec.n_zips + spec.n_zips / 3);
    for i in 0..spec.n_zips {
        let (county, centroid, neighbour) = if i < spec.n_counties {
            let p = jitter(rng, county_centres[i], 0.2);
            let (_, second) = two_nearest(&p.unit_vector(), &county_units);
            (i, p, second.filter(|&c| c != i))
        } else {
            let p = uniform_point(rng);
            let (first, second) = two_nearest(&p.unit_vector(), &county_units);
            (first, p, second)
        };
        let zip = ZipCode::from_index(i as u64 + 1).expect("validated zip count");
        let land_area_km2 = lognormal(rng, 60.0, 0.8).max(0.5);
        let population = lognormal(rng, spec.population_median, spec.population_log_sd).round() as u64;
        overlaps.push(Overlap {
            zip,
            county: county_fips[county],
            overlap_km2: land_area_km2 * (0.6 + 0.4 * rng.unit()),
        });
        if let Some(other) = neighbour {
            if rng.unit() < 0.3 {
                overlaps.push(Overlap {
                    zip,
                    county: county_fips[other],
                    overlap_km2: land_area_km2 * 0.35 * rng.unit(),
                });
            }
        }
        zips.push(ZipRecord {
            zip,
            county: county_fips[county],
            state: states[county_state[county]],
            centroid,
            population,
            land_area_km2,
        });
    }
    Ok(Geography { zips, overlaps })
}

fn generate_log(
    spec: &SynthWorldSpec,
    zips: &[ZipRecord],
    latent: &[Vec<f64>],
    absent: &BTreeSet<ZipCode>,
    rng: &mut SplitMix64,
) -> Result<QueryLog> {
    let q = &spec.query;
    let nq = q.n_queries;
    let width = nq.to_string().len().max(4);
    let queries: Vec<String> = (0..nq).map(|k| format!("q{k:0width$}")).collect();
    // popularity rank is independent of the lexicographic order
    let mut rank: Vec<usize> = (0..nq).collect();
    rng.shuffle(&mut rank);
    let base: Vec<f64> = rank
        .iter()
        .map(|&r| -q.zipf_exponent * (1.0 + r as f64).ln())
        .collect();
    let nf = spec.factors.len();
    let loadings: Vec<f64> = (0..nq * nf)
        .map(|_| q.loading_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut regions = BTreeMap::new();
    let mut logits = vec![0.0; nq];
    for (z, phi) in zips.iter().zip(latent) {
        if absent.contains(&z.zip) {
            continue;
        }
        let mut zrng = rng.split();
        let mut max = f64::NEG_INFINITY;
        for k in 0..nq {
            let l = base[k]
                + loadings[k * nf..(k + 1) * nf]
                    .iter()
                    .zip(phi)
                    .map(|(a, f)| a * f)
                    .sum::<f64>();
            logits[k] = l;
            max = max.max(l);
        }
        let norm: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let volume = (z.population as f64 * q.volume_per_capita).clamp(q.volume_min, q.volume_max);
        let mut pairs = Vec::new();
        for (k, l) in logits.iter().enumerate() {
            let lambda = volume * (l - max).exp() / norm;
            if lambda <= 0.0 {
                continue;
            }
            let c = Poisson::new(lambda)
                .map_err(|e| Error::SpecInvalid(format!("poisson rate {lambda}: {e}")))?
                .sample(&mut zrng) as u64;
            if c > 0 {
                pairs.push((k as u32, c));
            }
        }
        regions.insert(z.zip, pairs);
    }
    QueryLog::from_parts(queries, regions)
}

fn standardize(values: &mut [f64]) -> (f64, f64) {
    let m = mean(values);
    let sd = variance(values).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    values.iter_mut().for_each(|v| *v = (*v - m) / sd);
    (m, sd)
}

/// Random linear functional of the signatures scaled to unit variance.
fn linear_signal(set: &SignatureSet, rng: &mut SplitMix64) -> (Vec<f64>, f64, Vec<f64>) {
    let d = set.dim();
    let n = set.len() as f64;
    let mut means = vec![0.0; d];
    for (_, _, row) in set.iter() {
        means.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
    }
    let mut vars = vec![0.0; d];
    for (_, _, row) in set.iter() {
        vars.iter_mut()
            .zip(row.iter().zip(&means))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    let mut beta: Vec<f64> = vars
        .iter()
        .map(|&v| {
            let c: f64 = rng.sample(StandardNormal);
            if v > 1e-12 {
                c / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut signal: Vec<f64> = set
        .iter()
        .map(|(_, _, row)| row.iter().zip(&beta).map(|(x, b)| x * b).sum())
        .collect();
    let (m, sd) = standardize(&mut signal);
    beta.iter_mut().for_each(|b| *b /= sd);
    (signal, -m / sd, beta)
}

fn make_label(
    spec: &SynthWorldSpec,
    label: &LabelSpec,
    hierarchy: &RegionHierarchy,
    set: &SignatureSet,
) -> (Vec<f64>, LabelOracle) {
    let mut rng = SplitMix64::stream(spec.seed, label.coef_seed.wrapping_mul(0x9e37) ^ 0x4c41_4245);
    let mut name_rng = SplitMix64::stream(
        label.name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64)),
        spec.seed,
    );
    let sigma = label.noise_sd();
    let zips = hierarchy.zips();
    let mut oracle = LabelOracle {
        name: label.name.clone(),
        kind: label.kind,
        coefficients: Vec::new(),
        intercept: 0.0,
        state_shifts: BTreeMap::new(),
        sigma,
        best_r2: 1.0,
    };
    let mut y = match label.kind {
        LabelKind::LinearInSignature | LabelKind::StateShifted => {
            let (signal, intercept, beta) = linear_signal(set, &mut rng);
            oracle.coefficients = beta;
            oracle.intercept = intercept;
            signal
        }
        LabelKind::SpatialSmooth => {
            let field = Field::draw(&mut rng, label.length_scale_km, 1.0);
            let mut g: Vec<f64> = zips.iter().map(|z| field.at(z.centroid)).collect();
            standardize(&mut g);
            g
        }
        LabelKind::Noise => vec![0.0; zips.len()],
    };
    if label.kind == LabelKind::StateShifted {
        for (s, _) in hierarchy.states() {
            let shift = label.state_shift_sd * rng.sample::<f64, _>(StandardNormal);
            oracle.state_shifts.insert(*s, shift);
        }
        for (v, z) in y.iter_mut().zip(zips) {
            *v += oracle.state_shifts[&z.state];
        }
    }
    if sigma > 0.0 {
        for v in y.iter_mut() {
            *v += sigma * name_rng.sample::<f64, _>(StandardNormal);
        }
    }
    let var_y = variance(&y);
    oracle.best_r2 = if var_y > 0.0 { 1.0 - sigma * sigma / var_y } else { 0.0 };
    (y, oracle)
}

/// Builds a complete world from `spec`.
pub fn generate_world(spec: &SynthWorldSpec) -> Result<SynthWorld> {
    spec.validate()?;
    let mut geo_rng = SplitMix64::stream(spec.seed, 1);
    let geo = generate_geography(spec, &mut geo_rng)?;
    let hierarchy = RegionHierarchy::with_overlaps(geo.zips, &geo.overlaps)?;
    let zips = hierarchy.zips();

    let mut factor_rng = SplitMix64::stream(spec.seed, 2);
    let fields: Vec<Field> = spec
        .factors
        .iter()
        .map(|f| Field::draw(&mut factor_rng, f.length_scale_km, f.amplitude))
        .collect();
    let latent: Vec<Vec<f64>> = zips
        .iter()
        .map(|z| fields.iter().map(|f| f.at(z.centroid)).collect())
        .collect();

    let mut absent_rng = SplitMix64::stream(spec.seed, 3);
    let n_absent = (spec.absent_rate * zips.len() as f64).round() as usize;
    let mut order: Vec<ZipCode> = zips.iter().map(|z| z.zip).collect();
    absent_rng.shuffle(&mut order);
    let absent: BTreeSet<ZipCode> = order[..n_absent].iter().copied().collect();

    let mut log_rng = SplitMix64::stream(spec.seed, 4);
    let log = generate_log(spec, zips, &latent, &absent, &mut log_rng)?;
    let (vocabulary, signatures) = build_signatures(&log, &spec.manifest, &hierarchy)?;

    let mut zip_labels = Vec::with_capacity(spec.labels.len());
    let mut county_labels = Vec::with_capacity(spec.labels.len());
    let mut oracles = Vec::with_capacity(spec.labels.len());
    for label in &spec.labels {
        let (y, oracle) = make_label(spec, label, &hierarchy, &signatures);
        let mut zt = LabelTable::new(&label.name, LabelLevel::Zip);
        zt.values = zips.iter().map(|z| z.zip).zip(y.iter().copied()).collect();
        let mut ct = LabelTable::new(&label.name, LabelLevel::County);
        for county in hierarchy.counties() {
            let sum: f64 = county.zips.iter().map(|&i| y[i]).sum();
            ct.values.insert(county.fips, sum / county.zips.len() as f64);
        }
        zip_labels.push(zt);
        county_labels.push(ct);
        oracles.push(oracle);
    }

    Ok(SynthWorld {
        overlaps: geo.overlaps,
        log,
        vocabulary: vocabulary.clone(),
        signatures,
        zip_labels,
        county_labels,
        latent,
        oracle: Oracle {
            spec: spec.clone(),
            vocab_size: vocabulary.len(),
            absent_zips: absent.into_iter().collect(),
            labels: oracles,
        },
        hierarchy,
    })
}

/// Writes the world's raw inputs and oracle record under `dir`.
pub fn write_world(world: &SynthWorld, dir: &Path) -> Result<()> {
    write_geography(world.hierarchy.zips(), &dir.join("geography.csv"))?;
    write_overlaps(&world.overlaps, &dir.join("overlaps.csv"))?;
    write_query_log(&world.log, &dir.join("query_log.csv"))?;
    for t in &world.zip_labels {
        write_labels(t, &dir.join(format!("labels_{}.csv", t.variable)))?;
    }
    for t in &world.county_labels {
        write_labels(t, &dir.join(format!("county_labels_{}.csv", t.variable)))?;
    }
    let mut latent = String::from("region_id");
    for f in 0..world.oracle.spec.factors.len() {
        latent.push_str(&format!(",f{f}"));
    }
    latent.push('\n');
    for (z, row) in world.hierarchy.zips().iter().zip(&world.latent) {
        latent.push_str(z.zip.as_str());
        for v in row {
            latent.push(',');
            latent.push_str(&fmt6(*v));
        }
        latent.push('\n');
    }
    write_atomic(&dir.join("latent_factors.csv"), latent.as_bytes())?;
    let mut oracle = serde_json::to_string_pretty(&world.oracle)?;
    oracle.push('\n');
    write_atomic(&dir.join("oracle.json"), oracle.as_bytes())
}

const ORACLE_MAX_REGIONS: usize = 10;
const ORACLE_MAX_QUERIES: usize = 50;

/// Exhaustive vocabulary construction over raw records, for small worlds.
///
/// Deliberately naive: every ranking decision is made by comparing whole
/// records, with no interning or precomputed indices.
pub fn oracle_vocabulary(
    records: &[QueryLogRecord],
    k_top: usize,
    c_min: u64,
    vocab_size: usize,
) -> Result<Vocabulary> {
    let regions: BTreeSet<RegionCode> = records.iter().map(|r| r.region_id).collect();
    let queries: BTreeSet<String> = records.iter().map(|r| r.query_text.trim().to_lowercase()).collect();
    if regions.len() > ORACLE_MAX_REGIONS || queries.len() > ORACLE_MAX_QUERIES {
        return Err(Error::TooLarge(format!(
            "{} regions and {} queries (limits {ORACLE_MAX_REGIONS} and {ORACLE_MAX_QUERIES})",
            regions.len(),
            queries.len()
        )));
    }
    if regions.is_empty() {
        return Err(Error::EmptyInput("top-query sets"));
    }
    let count_of = |region: &RegionCode, q: &str| -> Option<u64> {
        records
            .iter()
            .find(|r| r.region_id == *region && r.query_text.trim().to_lowercase() == q)
            .map(|r| r.count)
    };
    // a query is in a region's top set when it qualifies and fewer than
    // k_top qualifying queries of that region outrank it
    let in_top = |region: &RegionCode, q: &str| -> bool {
        let Some(c) = count_of(region, q) else { return false };
        if c < c_min {
            return false;
        }
        let better = queries
            .iter()
            .filter(|other| other.as_str() != q)
            .filter(|other| match count_of(region, other) {
                Some(oc) if oc >= c_min => oc > c || (oc == c && other.as_str() < q),
                _ => false,
            })
            .count();
        better < k_top
    };
    let mut scored: Vec<(u64, u64, String)> = Vec::new();
    for q in &queries {
        let coverage = regions.iter().filter(|r| in_top(r, q)).count() as u64;
        if coverage == 0 {
            continue;
        }
        let total: u64 = regions.iter().filter_map(|r| count_of(r, q)).sum();
        scored.push((coverage, total, q.clone()));
    }
    // selection by repeated maximum rather than a sort
    let mut entries = Vec::new();
    while entries.len() < vocab_size && !scored.is_empty() {
        let mut best = 0;
        for i in 1..scored.len() {
            let (a, b) = (&scored[i], &scored[best]);
            if a.0 > b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 < b.2))) {
                best = i;
            }
        }
        let (coverage, total, q) = scored.remove(best);
        entries.push(VocabEntry {
            feature_index: entries.len(),
            query_text: q,
            region_coverage: coverage,
            total_count: total,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput("no region has a qualifying query"));
    }
    Vocabulary::new(entries)
}

/// Signature of `region` over `vocab`, straight from the definition.
pub fn oracle_vectorize(records: &[QueryLogRecord], region: &RegionCode, vocab: &Vocabulary) -> Vec<f64> {
    let raw: Vec<f64> = vocab
        .entries()
        .iter()
        .map(|e| {
            records
                .iter()
                .filter(|r| r.region_id == *region && r.query_text.trim().to_lowercase() == e.query_text)
                .map(|r| r.count as f64)
                .sum()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return raw;
    }
    raw.iter().map(|v| v * 100.0 / total).collect()
}

/// A random log over at most 10 regions and 50 queries with many count ties.
pub fn random_small_log(rng: &mut SplitMix64) -> Vec<QueryLogRecord> {
    let n_regions = 1 + rng.below(ORACLE_MAX_REGIONS as u64) as usize;
    let n_queries = 1 + rng.below(ORACLE_MAX_QUERIES as u64) as usize;
    let max_count = 1 + rng.below(40);
    let density = 0.2 + 0.8 * rng.unit();
    let mut out = Vec::new();
    for r in 0..n_regions {
        let region = RegionCode::from_index(10_000 + r as u64 * 7).expect("five digits");
        for q in 0..n_queries {
            if rng.unit() < density {
                out.push(QueryLogRecord {
                    region_id: region,
                    query_text: format!("query {}", (b'a' + (q % 26) as u8) as char).repeat(1 + q / 26),
                    count: rng.below(max_count + 1),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SynthWorldSpec {
        SynthWorldSpec {
            seed,
            n_states: 6,
            n_counties: 40,
            n_zips: 300,
            query: QueryModel {
                n_queries: 150,
                ..QueryModel::default()
            },
            manifest: DatasetManifest {
                vocab_size: 60,
                ..DatasetManifest::default()
            },
            labels: vec![
                LabelSpec::new("linear", LabelKind::LinearInSignature, 0.0),
                LabelSpec::new("noisy", LabelKind::LinearInSignature, 0.0).with_target_r2(0.8),
                LabelSpec::new("shifted", LabelKind::StateShifted, 0.0),
                LabelSpec::new("smooth", LabelKind::SpatialSmooth, 0.1),
                LabelSpec::new("noise", LabelKind::Noise, 1.0),
            ],
            ..SynthWorldSpec::default()
        }
    }

    #[test]
    fn deterministic_files() {
        let spec = small_spec(5);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_world(&generate_world(&spec).unwrap(), a.path()).unwrap();
        write_world(&generate_world(&spec).unwrap(), b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 13);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap(),
                "{n:?}"
            );
        }
    }

    #[test]
    fn hierarchy_shape() {
        let w = generate_world(&small_spec(1)).unwrap();
        assert_eq!(w.hierarchy.len(), 300);
        assert_eq!(w.hierarchy.n_states(), 6);
        assert_eq!(w.hierarchy.n_counties(), 40);
        assert_eq!(w.oracle.absent_zips.len(), 6);
        assert_eq!(w.signatures.dim(), w.vocabulary.len());
    }

    #[test]
    fn linear_label_matches_oracle_coefficients() {
        let w = generate_world(&small_spec(2)).unwrap();
        let o = w.oracle.label("linear").unwrap();
        assert_eq!(o.best_r2, 1.0);
        let t = w.zip_label("linear").unwrap();
        for (z, _, row) in w.signatures.iter() {
            let pred = o.intercept + row.iter().zip(&o.coefficients).map(|(x, b)| x * b).sum::<f64>();
            assert!((pred - t.values[&z]).abs() < 1e-9);
        }
        let s = w.oracle.label("shifted").unwrap();
        assert_eq!(s.state_shifts.len(), 6);
    }

    #[test]
    fn county_labels_are_unweighted_means() {
        let w = generate_world(&small_spec(3)).unwrap();
        for name in ["linear", "smooth", "noise"] {
            let (zt, ct) = (w.zip_label(name).unwrap(), w.county_label(name).unwrap());
            for c in w.hierarchy.counties() {
                let vals: Vec<f64> = c.zips.iter().map(|&i| zt.values[&w.hierarchy.zips()[i].zip]).collect();
                assert_eq!(ct.values[&c.fips], vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = small_spec(0);
        s.n_counties = 5;
        assert!(matches!(generate_world(&s), Err(Error::SpecInvalid(_))));
        let mut s = small_spec(0);
        s.labels.push(LabelSpec::new("linear", LabelKind::Noise, 1.0));
        assert!(matches!(generate_world(&s), Err(Error::SpecInvalid(_))));
        let mut s = small_spec(0);
        s.absent_rate = 1.0;
        assert!(matches!(generate_world(&s), Err(Error::SpecInvalid(_))));
    }

    fn toy_records() -> Vec<QueryLogRecord> {
        let rec = |r: &str, q: &str, c: u64| QueryLogRecord {
            region_id: r.parse().unwrap(),
            query_text: q.into(),
            count: c,
        };
        vec![
            rec("00001", "q1", 5),
            rec("00001", "q2", 4),
            rec("00001", "q3", 1),
            rec("00002", "q1", 3),
            rec("00002", "q2", 2),
            rec("00002", "q3", 2),
            rec("00003", "q4", 9),
            rec("00003", "q2", 2),
        ]
    }

    #[test]
    fn oracle_on_toy_world() {
        let v = oracle_vocabulary(&toy_records(), 2, 2, 3).unwrap();
        let order: Vec<&str> = v.queries().collect();
        assert_eq!(order, ["q2", "q1", "q4"]);
        let sig = oracle_vectorize(&toy_records(), &"00001".parse().unwrap(), &v);
        assert!((sig[0] - 44.4444).abs() < 1e-4 && (sig[1] - 55.5556).abs() < 1e-4 && sig[2] == 0.0);
    }

    #[test]
    fn oracle_single_region_and_guard() {
        let recs: Vec<_> = toy_records().into_iter().filter(|r| r.region_id.as_str() == "00002").collect();
        let v = oracle_vocabulary(&recs, 5, 0, 10).unwrap();
        assert_eq!(v.queries().collect::<Vec<_>>(), ["q1", "q2", "q3"]);
        let big: Vec<QueryLogRecord> = (0..11)
            .map(|i| QueryLogRecord {
                region_id: RegionCode::from_index(i).unwrap(),
                query_text: "x".into(),
                count: 1,
            })
            .collect();
        assert!(matches!(oracle_vocabulary(&big, 1, 0, 1), Err(Error::TooLarge(_))));
    }
}
