//! Experiment drivers: imputation, state extrapolation, two-state
//! extrapolation, super-resolution and the ablation sweeps.
//!
//! Every task is reduced to one or more evaluation units, each a disjoint
//! (training zips, evaluation zips) pair. Units are checked for leakage
//! before any model sees them. Jobs are independent per (variable, model)
//! and their results are merged in that canonical order, so output does not
//! depend on `jobs`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::{CountyFips, RegionCode, StateFips, ZipCode, FLORIDA, TEXAS};
use crate::error::{Error, Result};
use crate::eval::{
    check_variance, export_choropleth, export_scatter, r_squared, EvalReport, ScatterRow, TaskKind,
};
use crate::io::{fmt6, write_atomic, write_report, LabelTable};
use crate::models::{default_lambda_grid, IdwModel, IdwParams, ModelKind, RidgeCv, Site};
use crate::rng::SplitMix64;
use crate::signature::{aggregate_to_county, truncate_features, SignatureSet, SignatureStatus};
use crate::spatial::{county_folds_for, county_holdout_split, state_groups, LatLon, RegionHierarchy, SplitSpec};
use crate::stats::median_in_place;

/// Default population threshold when a filter is requested.
pub const POPULATION_THRESHOLD: u64 = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: TaskKind,
    /// Empty means every supplied label table.
    pub variables: Vec<String>,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub holdout_frac: f64,
    pub folds: u32,
    /// Folds for tuning lambda inside a training set that has no outer folds.
    pub inner_folds: u32,
    pub pop_threshold: Option<u64>,
    pub lambda_grid: Vec<f64>,
    pub idw: IdwParams,
    pub train_fractions: Vec<f64>,
    pub feature_dims: Vec<usize>,
    pub ablation_seeds: u32,
    pub source_states: Vec<StateFips>,
    pub jobs: usize,
    pub record_runtime: bool,
}

impl TaskConfig {
    pub fn new(task: TaskKind) -> Self {
        TaskConfig {
            task,
            variables: Vec::new(),
            models: ModelKind::ALL.to_vec(),
            seed: 0,
            holdout_frac: 0.2,
            folds: if task == TaskKind::ExtrapolationStates { 10 } else { 5 },
            inner_folds: 5,
            pop_threshold: None,
            lambda_grid: default_lambda_grid(),
            idw: IdwParams::default(),
            train_fractions: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            feature_dims: Vec::new(),
            ablation_seeds: 3,
            source_states: vec![TEXAS.parse().expect("valid"), FLORIDA.parse().expect("valid")],
            jobs: 1,
            record_runtime: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::BadParameter("no models selected".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::BadParameter("lambda grid must be nonempty, finite and >= 0".into()));
        }
        if self.folds < 2 || self.inner_folds < 2 {
            return Err(Error::BadParameter("need at least 2 folds".into()));
        }
        if self.train_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::BadParameter("training fractions must lie in (0, 1]".into()));
        }
        if self.ablation_seeds == 0 {
            return Err(Error::BadParameter("ablation needs at least one seed".into()));
        }
        if self.jobs == 0 {
            return Err(Error::BadParameter("jobs must be >= 1".into()));
        }
        self.idw.validate()
    }
}

/// Shared read-only inputs of a run.
#[derive(Clone, Copy)]
pub struct Inputs<'a> {
    pub hierarchy: &'a RegionHierarchy,
    pub signatures: &'a SignatureSet,
    /// Zip-level labels.
    pub labels: &'a [LabelTable],
    /// County-level labels, used by super-resolution.
    pub county_labels: &'a [LabelTable],
    /// Imputation split; generated from the config seed when absent.
    pub split: Option<&'a SplitSpec>,
}

/// Everything a task run produces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskRun {
    pub reports: Vec<EvalReport>,
    /// Scatter rows per report, in the same order.
    pub scatters: Vec<Vec<ScatterRow>>,
}

/// Granularity at which training and evaluation sets must be disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLevel {
    Zip,
    County,
    State,
}

/// Fails with `Leakage` when `train` and `eval` share a region at `level`.
pub fn check_no_leakage(
    h: &RegionHierarchy,
    train: &[ZipCode],
    eval: &[ZipCode],
    level: BlockLevel,
) -> Result<()> {
    let key = |z: &ZipCode| -> Result<RegionCode> {
        let rec = h.zip(z).ok_or_else(|| Error::UnknownRegion(z.to_string()))?;
        Ok(match level {
            BlockLevel::Zip => rec.zip,
            BlockLevel::County => rec.county,
            // state codes are two digits; pad so they share the key type
            BlockLevel::State => RegionCode::from_index(rec.state.as_str().parse().expect("digits"))
                .expect("fits"),
        })
    };
    let train: BTreeSet<RegionCode> = train.iter().map(key).collect::<Result<_>>()?;
    let mut shared = BTreeSet::new();
    for z in eval {
        let k = key(z)?;
        if train.contains(&k) {
            shared.insert(k);
        }
    }
    match shared.first() {
        None => Ok(()),
        Some(first) => Err(Error::Leakage {
            count: shared.len(),
            first: first.to_string(),
        }),
    }
}

/// Labeled zips eligible for one variable: a finite label, a usable
/// signature and, when filtering, population above the threshold.
struct VarData {
    zips: Vec<ZipCode>,
    y: Vec<f64>,
    /// Row of each zip in the signature set.
    rows: Vec<usize>,
}

impl VarData {
    fn new(inputs: &Inputs<'_>, table: &LabelTable, filter: Option<u64>) -> Result<Self> {
        let (mut zips, mut y, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for (zip, &v) in &table.values {
            let rec = inputs
                .hierarchy
                .zip(zip)
                .ok_or_else(|| Error::UnknownRegion(zip.to_string()))?;
            if filter.is_some_and(|t| rec.population <= t) {
                continue;
            }
            let Some(row) = inputs.signatures.position(zip) else { continue };
            if inputs.signatures.status(row) == SignatureStatus::Absent || !v.is_finite() {
                continue;
            }
            zips.push(*zip);
            y.push(v);
            rows.push(row);
        }
        if zips.is_empty() {
            return Err(Error::NoLabels);
        }
        Ok(VarData { zips, y, rows })
    }

    fn zips_at(&self, pos: &[usize]) -> Vec<ZipCode> {
        pos.iter().map(|&p| self.zips[p]).collect()
    }

    fn y_at(&self, pos: &[usize]) -> Vec<f64> {
        pos.iter().map(|&p| self.y[p]).collect()
    }

    fn design(&self, set: &SignatureSet, pos: &[usize]) -> DMatrix<f64> {
        let d = set.dim();
        let mut x = DMatrix::zeros(pos.len(), d);
        for (i, &p) in pos.iter().enumerate() {
            for (j, v) in set.row(self.rows[p]).iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        x
    }
}

/// Training positions with their fold ids, plus what to evaluate.
struct Plan {
    train: Vec<usize>,
    fold_of: Vec<u32>,
    /// Evaluate each fold with a model trained on the others.
    cross_validate: bool,
    /// Evaluate these positions with a model trained on every fold.
    holdout: Option<Vec<usize>>,
    level: BlockLevel,
}

impl Plan {
    fn n_folds(&self) -> usize {
        self.fold_of.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    fn fold(&self, f: usize) -> Vec<usize> {
        self.train
            .iter()
            .zip(&self.fold_of)
            .filter(|(_, &g)| g as usize == f)
            .map(|(&p, _)| p)
            .collect()
    }

    fn nonempty_folds(&self) -> Vec<usize> {
        (0..self.n_folds()).filter(|&f| self.fold_of.iter().any(|&g| g as usize == f)).collect()
    }
}

#[derive(Default)]
struct Outcome {
    per_fold: Vec<f64>,
    test: Option<f64>,
    lambda: Option<f64>,
    scatter: Vec<ScatterRow>,
    n_train: usize,
}

fn evaluate(data: &VarData, pos: &[usize], pred: &[f64], out: &mut Vec<ScatterRow>) -> Result<f64> {
    let actual = data.y_at(pos);
    let r2 = r_squared(&actual, pred)?;
    out.extend(pos.iter().zip(actual).zip(pred).map(|((&p, a), &q)| ScatterRow {
        region_id: data.zips[p],
        actual: a,
        predicted: q,
    }));
    Ok(r2)
}

struct Ctx<'a> {
    inputs: Inputs<'a>,
    config: &'a TaskConfig,
}

/// Predictions at `eval` from a non-ridge model trained on `train`.
fn baseline_predict(
    ctx: &Ctx<'_>,
    model: ModelKind,
    data: &VarData,
    train: &[usize],
    eval: &[usize],
) -> Result<Vec<f64>> {
    let h = ctx.inputs.hierarchy;
    match model {
        ModelKind::Idw => {
            let sites = train
                .iter()
                .map(|&p| Site {
                    id: data.zips[p],
                    location: h.zip(&data.zips[p]).expect("known zip").centroid,
                    value: data.y[p],
                })
                .collect();
            let idw = IdwModel::new(sites, ctx.config.idw)?;
            eval.iter()
                .map(|&p| idw.predict(h.zip(&data.zips[p]).expect("known zip").centroid))
                .collect()
        }
        ModelKind::HierMedian => {
            let m = crate::models::median_fit(train.iter().map(|&p| (data.zips[p], data.y[p])), h)?;
            eval.iter().map(|&p| m.predict(&data.zips[p], h)).collect()
        }
        ModelKind::TopsearchRidge => unreachable!("ridge handled separately"),
    }
}

fn run_plan(
    ctx: &Ctx<'_>,
    model: ModelKind,
    data: &VarData,
    set: &SignatureSet,
    plan: &Plan,
) -> Result<Outcome> {
    let h = ctx.inputs.hierarchy;
    let folds = plan.nonempty_folds();
    let mut out = Outcome {
        n_train: plan.train.len(),
        ..Outcome::default()
    };
    let train_zips = data.zips_at(&plan.train);
    if plan.cross_validate {
        for &f in &folds {
            let held = plan.fold(f);
            let rest: Vec<usize> = plan
                .train
                .iter()
                .zip(&plan.fold_of)
                .filter(|(_, &g)| g as usize != f)
                .map(|(&p, _)| p)
                .collect();
            check_no_leakage(h, &data.zips_at(&rest), &data.zips_at(&held), plan.level)?;
            check_variance(&data.y_at(&held))?;
        }
    }
    if let Some(test) = &plan.holdout {
        if test.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        check_no_leakage(h, &train_zips, &data.zips_at(test), plan.level)?;
        check_variance(&data.y_at(test))?;
    }

    if model == ModelKind::TopsearchRidge {
        let grid = &ctx.config.lambda_grid;
        let x = data.design(set, &plan.train);
        let cv = RidgeCv::new(&x, &data.y_at(&plan.train), &plan.fold_of)?;
        drop(x);
        if plan.cross_validate {
            for &f in &folds {
                let others: Vec<usize> = folds.iter().copied().filter(|&g| g != f).collect();
                let tuned = cv.tune(&others, grid)?;
                let (xf, _) = cv.fold_data(f);
                let pred = tuned.model.predict(xf);
                out.per_fold.push(evaluate(data, &plan.fold(f), &pred, &mut out.scatter)?);
            }
        }
        if let Some(test) = &plan.holdout {
            let tuned = cv.tune(&folds, grid)?;
            let pred = tuned.model.predict(&data.design(set, test));
            out.test = Some(evaluate(data, test, &pred, &mut out.scatter)?);
            out.lambda = Some(tuned.lambda);
        }
    } else {
        if plan.cross_validate {
            for &f in &folds {
                let held = plan.fold(f);
                let rest: Vec<usize> = plan
                    .train
                    .iter()
                    .zip(&plan.fold_of)
                    .filter(|(_, &g)| g as usize != f)
                    .map(|(&p, _)| p)
                    .collect();
                let pred = baseline_predict(ctx, model, data, &rest, &held)?;
                out.per_fold.push(evaluate(data, &held, &pred, &mut out.scatter)?);
            }
        }
        if let Some(test) = &plan.holdout {
            let pred = baseline_predict(ctx, model, data, &plan.train, test)?;
            out.test = Some(evaluate(data, test, &pred, &mut out.scatter)?);
        }
    }
    if out.per_fold.is_empty() {
        out.per_fold.extend(out.test);
    }
    Ok(out)
}

fn tables<'a>(labels: &'a [LabelTable], variables: &[String]) -> Result<Vec<&'a LabelTable>> {
    if variables.is_empty() {
        if labels.is_empty() {
            return Err(Error::NoLabels);
        }
        let mut all: Vec<&LabelTable> = labels.iter().collect();
        all.sort_by(|a, b| a.variable.cmp(&b.variable));
        return Ok(all);
    }
    let mut names: Vec<&String> = variables.iter().collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|v| {
            labels
                .iter()
                .find(|t| &t.variable == v)
                .ok_or_else(|| Error::BadParameter(format!("no label table for variable `{v}`")))
        })
        .collect()
}

fn sorted_models(config: &TaskConfig) -> Vec<ModelKind> {
    let mut m = config.models.clone();
    m.sort();
    m.dedup();
    m
}

/// Runs `jobs` on a pool of `threads`, keeping input order.
fn run_jobs<J, T, F>(threads: usize, jobs: Vec<J>, f: F) -> Result<Vec<T>>
where
    J: Send + Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Send + Sync,
{
    if threads <= 1 {
        return jobs.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::BadParameter(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

fn report(
    config: &TaskConfig,
    variable: &str,
    model: String,
    filter: Option<u64>,
    outcome: &Outcome,
    n_test: usize,
    started: Instant,
) -> EvalReport {
    EvalReport {
        task: config.task,
        variable: variable.to_string(),
        model,
        filter,
        seed: config.seed,
        lambda: outcome.lambda,
        per_fold_r2: outcome.per_fold.clone(),
        test_r2: outcome.test,
        n_train: outcome.n_train,
        n_test,
        runtime_s: if config.record_runtime { started.elapsed().as_secs_f64() } else { 0.0 },
    }
}

fn imputation_plan(data: &VarData, split: &SplitSpec) -> Result<Plan> {
    let (mut train, mut fold_of, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (p, z) in data.zips.iter().enumerate() {
        match split.assignment(z) {
            Some(crate::spatial::Assignment::Fold(f)) => {
                train.push(p);
                fold_of.push(f);
            }
            Some(crate::spatial::Assignment::Test) => test.push(p),
            None => {}
        }
    }
    if train.is_empty() {
        return Err(Error::NoLabels);
    }
    Ok(Plan {
        train,
        fold_of,
        cross_validate: true,
        holdout: Some(test),
        level: BlockLevel::County,
    })
}

fn imputation_split(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<SplitSpec> {
    match inputs.split {
        Some(s) => Ok(s.clone()),
        None => county_holdout_split(inputs.hierarchy, config.seed, config.holdout_frac, config.folds),
    }
}

/// County-blocked CV folds plus a county holdout; the holdout model is
/// retrained on every training fold.
pub fn run_imputation(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<TaskRun> {
    config.validate()?;
    let split = imputation_split(inputs, config)?;
    let ctx = Ctx { inputs: *inputs, config };
    let jobs: Vec<(&LabelTable, ModelKind)> = tables(inputs.labels, &config.variables)?
        .into_iter()
        .flat_map(|t| sorted_models(config).into_iter().map(move |m| (t, m)))
        .collect();
    let results = run_jobs(config.jobs, jobs, |&(table, model)| {
        let started = Instant::now();
        let data = VarData::new(inputs, table, config.pop_threshold)?;
        let plan = imputation_plan(&data, &split)?;
        let outcome = run_plan(&ctx, model, &data, inputs.signatures, &plan)?;
        let n_test = plan.holdout.as_ref().map_or(0, Vec::len);
        let r = report(config, &table.variable, model.to_string(), config.pop_threshold, &outcome, n_test, started);
        Ok((r, outcome.scatter))
    })?;
    Ok(collect(results))
}

fn collect(results: Vec<(EvalReport, Vec<ScatterRow>)>) -> TaskRun {
    let (reports, scatters) = results.into_iter().unzip();
    TaskRun { reports, scatters }
}

/// Leave-states-out CV over state groups.
pub fn run_extrapolation_states(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<TaskRun> {
    config.validate()?;
    let groups = state_groups(inputs.hierarchy, config.seed, config.folds)?;
    let group_of: BTreeMap<StateFips, u32> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, states)| states.iter().map(move |s| (*s, g as u32)))
        .collect();
    let ctx = Ctx { inputs: *inputs, config };
    let jobs: Vec<(&LabelTable, ModelKind)> = tables(inputs.labels, &config.variables)?
        .into_iter()
        .flat_map(|t| sorted_models(config).into_iter().map(move |m| (t, m)))
        .collect();
    let results = run_jobs(config.jobs, jobs, |&(table, model)| {
        let started = Instant::now();
        let data = VarData::new(inputs, table, config.pop_threshold)?;
        let fold_of: Vec<u32> = data
            .zips
            .iter()
            .map(|z| group_of[&inputs.hierarchy.zip(z).expect("known zip").state])
            .collect();
        let plan = Plan {
            train: (0..data.zips.len()).collect(),
            fold_of,
            cross_validate: true,
            holdout: None,
            level: BlockLevel::State,
        };
        let outcome = run_plan(&ctx, model, &data, inputs.signatures, &plan)?;
        let r = report(config, &table.variable, model.to_string(), config.pop_threshold, &outcome, 0, started);
        Ok((r, outcome.scatter))
    })?;
    Ok(collect(results))
}

/// Trains on the source states only and evaluates on every other zip.
pub fn run_extrapolation_pair(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<TaskRun> {
    config.validate()?;
    let h = inputs.hierarchy;
    let sources: BTreeSet<StateFips> = config.source_states.iter().copied().collect();
    if sources.is_empty() {
        return Err(Error::BadParameter("no source states".into()));
    }
    let known: BTreeSet<StateFips> = h.states().map(|(s, _)| *s).collect();
    if let Some(s) = sources.iter().find(|s| !known.contains(s)) {
        return Err(Error::BadParameter(format!("source state {s} not in geography")));
    }
    let ctx = Ctx { inputs: *inputs, config };
    let jobs: Vec<(&LabelTable, ModelKind)> = tables(inputs.labels, &config.variables)?
        .into_iter()
        .flat_map(|t| sorted_models(config).into_iter().map(move |m| (t, m)))
        .collect();
    let results = run_jobs(config.jobs, jobs, |&(table, model)| {
        let started = Instant::now();
        let data = VarData::new(inputs, table, config.pop_threshold)?;
        let (train, test): (Vec<usize>, Vec<usize>) = (0..data.zips.len())
            .partition(|&p| sources.contains(&h.zip(&data.zips[p]).expect("known zip").state));
        if test.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        if train.is_empty() {
            return Err(Error::NoLabels);
        }
        let fold_of = county_folds_for(h, &data.zips_at(&train), config.seed, config.inner_folds)?;
        let n_test = test.len();
        let plan = Plan {
            train,
            fold_of,
            cross_validate: false,
            holdout: Some(test),
            level: BlockLevel::State,
        };
        let outcome = run_plan(&ctx, model, &data, inputs.signatures, &plan)?;
        let r = report(config, &table.variable, model.to_string(), config.pop_threshold, &outcome, n_test, started);
        Ok((r, outcome.scatter))
    })?;
    Ok(collect(results))
}

/// County-level training, zip-level prediction. Each (variable, model)
/// yields a report over all zips and one over zips above the population
/// threshold.
pub fn run_superres(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<TaskRun> {
    config.validate()?;
    let h = inputs.hierarchy;
    let threshold = config.pop_threshold.unwrap_or(POPULATION_THRESHOLD);
    let county_sigs = aggregate_to_county(inputs.signatures, h)?;
    let jobs: Vec<(&LabelTable, ModelKind)> = tables(inputs.labels, &config.variables)?
        .into_iter()
        .flat_map(|t| sorted_models(config).into_iter().map(move |m| (t, m)))
        .collect();
    let results = run_jobs(config.jobs, jobs, |&(table, model)| {
        let started = Instant::now();
        let county_table = inputs
            .county_labels
            .iter()
            .find(|t| t.variable == table.variable)
            .ok_or_else(|| {
                Error::BadParameter(format!("no county labels for variable `{}`", table.variable))
            })?;
        let counties: Vec<(CountyFips, f64)> = county_table
            .values
            .iter()
            .filter(|(c, v)| v.is_finite() && county_sigs.contains_key(c))
            .map(|(c, v)| (*c, *v))
            .collect();
        let y_county: Vec<f64> = counties.iter().map(|c| c.1).collect();
        check_variance(&y_county)?;
        let data = VarData::new(inputs, table, None)?;
        let all: Vec<usize> = (0..data.zips.len()).collect();
        let (pred, lambda) = superres_predict(inputs, config, model, &counties, &county_sigs, &data)?;

        let mut out = Vec::new();
        for filter in [None, Some(threshold)] {
            let pos: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&p| filter.is_none_or(|t| h.zip(&data.zips[p]).expect("known").population > t))
                .collect();
            if pos.is_empty() {
                continue;
            }
            let mut scatter = Vec::new();
            let sub_pred: Vec<f64> = pos.iter().map(|&p| pred[p]).collect();
            let r2 = evaluate(&data, &pos, &sub_pred, &mut scatter)?;
            let outcome = Outcome {
                per_fold: vec![r2],
                test: Some(r2),
                lambda,
                scatter: Vec::new(),
                n_train: counties.len(),
            };
            out.push((
                report(config, &table.variable, model.to_string(), filter, &outcome, pos.len(), started),
                scatter,
            ));
        }
        Ok(out)
    })?;
    Ok(collect(results.into_iter().flatten().collect()))
}

fn superres_predict(
    inputs: &Inputs<'_>,
    config: &TaskConfig,
    model: ModelKind,
    counties: &[(CountyFips, f64)],
    county_sigs: &BTreeMap<CountyFips, Vec<f64>>,
    data: &VarData,
) -> Result<(Vec<f64>, Option<f64>)> {
    let h = inputs.hierarchy;
    match model {
        ModelKind::TopsearchRidge => {
            let d = inputs.signatures.dim();
            let x = DMatrix::from_fn(counties.len(), d, |i, j| county_sigs[&counties[i].0][j]);
            let y: Vec<f64> = counties.iter().map(|c| c.1).collect();
            let mut order: Vec<usize> = (0..counties.len()).collect();
            SplitMix64::new(config.seed).shuffle(&mut order);
            let k = (config.inner_folds as usize).min(counties.len());
            if k < 2 {
                return Err(Error::TooFewCounties { counties: counties.len(), folds: config.inner_folds as usize });
            }
            let mut fold_of = vec![0u32; counties.len()];
            for (i, &c) in order.iter().enumerate() {
                fold_of[c] = (i % k) as u32;
            }
            let cv = RidgeCv::new(&x, &y, &fold_of)?;
            let folds: Vec<usize> = (0..k).collect();
            let tuned = cv.tune(&folds, &config.lambda_grid)?;
            let all: Vec<usize> = (0..data.zips.len()).collect();
            Ok((tuned.model.predict(&data.design(inputs.signatures, &all)), Some(tuned.lambda)))
        }
        ModelKind::Idw => {
            let sites = counties
                .iter()
                .map(|(c, v)| {
                    let county = h.county(c).expect("known county");
                    let n = county.zips.len() as f64;
                    let (lat, lon) = county.zips.iter().fold((0.0, 0.0), |(a, b), &i| {
                        let p = h.zips()[i].centroid;
                        (a + p.lat / n, b + p.lon / n)
                    });
                    Site { id: *c, location: LatLon::new(lat, lon), value: *v }
                })
                .collect();
            let idw = IdwModel::new(sites, config.idw)?;
            let pred = data
                .zips
                .iter()
                .map(|z| idw.predict(h.zip(z).expect("known").centroid))
                .collect::<Result<_>>()?;
            Ok((pred, None))
        }
        ModelKind::HierMedian => {
            let value: BTreeMap<CountyFips, f64> = counties.iter().copied().collect();
            let mut by_state: BTreeMap<StateFips, Vec<f64>> = BTreeMap::new();
            for (c, v) in counties {
                by_state.entry(h.county(c).expect("known").state).or_default().push(*v);
            }
            let state: BTreeMap<StateFips, f64> = by_state
                .into_iter()
                .map(|(s, mut v)| (s, median_in_place(&mut v)))
                .collect();
            let national = median_in_place(&mut counties.iter().map(|c| c.1).collect::<Vec<_>>());
            let pred = data
                .zips
                .iter()
                .map(|z| {
                    let rec = h.zip(z).expect("known");
                    value
                        .get(&rec.county)
                        .or_else(|| state.get(&rec.state))
                        .copied()
                        .unwrap_or(national)
                })
                .collect();
            Ok((pred, None))
        }
    }
}

/// Model label of an ablation grid point.
pub fn ablation_model_name(kind: AblationAxis, value: f64) -> String {
    match kind {
        AblationAxis::TrainFraction => format!("topsearch_ridge_frac{value:.2}"),
        AblationAxis::FeatureDim => format!("topsearch_ridge_dim{}", value as usize),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    TrainFraction,
    FeatureDim,
}

/// Training-fraction and feature-dimension sweeps of the ridge model on
/// the imputation split; one TEST R² per seed and grid point.
pub fn run_ablation(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<TaskRun> {
    config.validate()?;
    let split = imputation_split(inputs, config)?;
    let ctx = Ctx { inputs: *inputs, config };
    let mut jobs: Vec<(&LabelTable, AblationAxis, f64)> = Vec::new();
    for t in tables(inputs.labels, &config.variables)? {
        for &f in &config.train_fractions {
            jobs.push((t, AblationAxis::TrainFraction, f));
        }
        for &d in &config.feature_dims {
            jobs.push((t, AblationAxis::FeatureDim, d as f64));
        }
    }
    let results = run_jobs(config.jobs, jobs, |&(table, axis, value)| {
        let started = Instant::now();
        let data = VarData::new(inputs, table, config.pop_threshold)?;
        let full = imputation_plan(&data, &split)?;
        let test = full.holdout.clone().expect("imputation plan has a holdout");
        let mut r2s = Vec::new();
        let mut n_train = 0;
        let mut last = Outcome::default();
        match axis {
            AblationAxis::TrainFraction => {
                for s in 0..config.ablation_seeds {
                    let plan = subsample(&full, value, config.seed, s);
                    n_train = plan.train.len();
                    last = run_plan(&ctx, ModelKind::TopsearchRidge, &data, inputs.signatures, &plan)?;
                    r2s.push(last.test.expect("holdout evaluated"));
                }
            }
            AblationAxis::FeatureDim => {
                let set = truncate_features(inputs.signatures, value as usize)?;
                let plan = Plan { cross_validate: false, ..full };
                n_train = plan.train.len();
                last = run_plan(&ctx, ModelKind::TopsearchRidge, &data, &set, &plan)?;
                r2s.push(last.test.expect("holdout evaluated"));
            }
        }
        let outcome = Outcome {
            test: Some(r2s.iter().sum::<f64>() / r2s.len() as f64),
            per_fold: r2s,
            lambda: last.lambda,
            scatter: Vec::new(),
            n_train,
        };
        let name = ablation_model_name(axis, value);
        let r = report(config, &table.variable, name, config.pop_threshold, &outcome, test.len(), started);
        Ok((r, last.scatter))
    })?;
    Ok(collect(results))
}

/// Uniform subsample of the training positions; keeps canonical order.
fn subsample(full: &Plan, frac: f64, seed: u64, draw: u32) -> Plan {
    let n = full.train.len();
    let keep = ((frac * n as f64).round() as usize).clamp(2.min(n), n);
    let mut idx: Vec<usize> = (0..n).collect();
    if keep < n {
        SplitMix64::stream(seed, 0xab1a_0000 + draw as u64).shuffle(&mut idx);
        idx.truncate(keep);
        idx.sort_unstable();
    }
    Plan {
        train: idx.iter().map(|&i| full.train[i]).collect(),
        fold_of: idx.iter().map(|&i| full.fold_of[i]).collect(),
        cross_validate: false,
        holdout: full.holdout.clone(),
        level: full.level,
    }
}

/// Dispatches on `config.task`.
pub fn run_task(inputs: &Inputs<'_>, config: &TaskConfig) -> Result<TaskRun> {
    match config.task {
        TaskKind::Imputation => run_imputation(inputs, config),
        TaskKind::ExtrapolationStates => run_extrapolation_states(inputs, config),
        TaskKind::ExtrapolationPair => run_extrapolation_pair(inputs, config),
        TaskKind::Superres => run_superres(inputs, config),
        TaskKind::Ablation => run_ablation(inputs, config),
    }
}

/// Headline value of a report: TEST R² when present, else the fold mean.
pub fn headline_r2(r: &EvalReport) -> f64 {
    r.test_r2
        .unwrap_or_else(|| r.per_fold_r2.iter().sum::<f64>() / r.per_fold_r2.len() as f64)
}

/// Cross-variable statistics per (model, filter).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: String,
    pub filter: Option<u64>,
    pub n_variables: usize,
    pub mean: f64,
    /// Mean after dropping the two lowest variables; `None` below 3.
    pub mean_excluding_two_lowest: Option<f64>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, Option<u64>), Vec<f64>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.model.clone(), r.filter)).or_default().push(headline_r2(r));
    }
    groups
        .into_iter()
        .map(|((model, filter), mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            Aggregate {
                model,
                filter,
                n_variables: n,
                mean,
                mean_excluding_two_lowest: (n >= 3).then(|| v[2..].iter().sum::<f64>() / (n - 2) as f64),
                min: v[0],
                median: median_in_place(&mut v.clone()),
                max: v[n - 1],
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

/// Renders the per-report summary and the cross-variable aggregate.
pub fn summary_tables(reports: &[EvalReport]) -> (String, String) {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by(|a, b| {
        (a.task, &a.variable, &a.model, a.filter).cmp(&(b.task, &b.variable, &b.model, b.filter))
    });
    let mut summary = String::from("task,variable,model,filter,mean_fold_r2,test_r2,n_train,n_test\n");
    for r in rows {
        let mean = r.per_fold_r2.iter().sum::<f64>() / r.per_fold_r2.len() as f64;
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.task,
            r.variable,
            r.model,
            r.filter.map(|f| f.to_string()).unwrap_or_default(),
            fmt6(mean),
            opt(r.test_r2),
            r.n_train,
            r.n_test
        ));
    }
    let mut agg = String::from("model,filter,n_variables,mean,mean_excluding_two_lowest,min,median,max\n");
    for a in aggregate(reports) {
        agg.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.model,
            a.filter.map(|f| f.to_string()).unwrap_or_default(),
            a.n_variables,
            fmt6(a.mean),
            opt(a.mean_excluding_two_lowest),
            fmt6(a.min),
            fmt6(a.median),
            fmt6(a.max)
        ));
    }
    (summary, agg)
}

/// Writes reports, scatter and choropleth tables and the summaries.
pub fn write_run(run: &TaskRun, dir: &Path) -> Result<()> {
    for (r, scatter) in run.reports.iter().zip(&run.scatters) {
        let stem = r.file_stem();
        write_report(r, &dir.join(format!("report_{stem}.json")))?;
        if !scatter.is_empty() {
            export_scatter(scatter, &dir.join(format!("scatter_{stem}.csv")))?;
            export_choropleth(
                scatter.iter().map(|s| (s.region_id, s.predicted)),
                &dir.join(format!("choropleth_{stem}.csv")),
            )?;
        }
    }
    if let Some(first) = run.reports.first() {
        let (summary, agg) = summary_tables(&run.reports);
        write_atomic(&dir.join(format!("summary_{}.csv", first.task)), summary.as_bytes())?;
        write_atomic(&dir.join(format!("aggregate_{}.csv", first.task)), agg.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::DatasetManifest;
    use crate::spatial::Assignment;
    use crate::synth::{generate_world, LabelKind, LabelSpec, QueryModel, SynthWorld, SynthWorldSpec};

    fn world(seed: u64) -> SynthWorld {
        generate_world(&SynthWorldSpec {
            seed,
            n_states: 8,
            n_counties: 80,
            n_zips: 600,
            query: QueryModel { n_queries: 200, ..QueryModel::default() },
            manifest: DatasetManifest { vocab_size: 40, ..DatasetManifest::default() },
            labels: vec![
                LabelSpec::new("linear", LabelKind::LinearInSignature, 0.0),
                LabelSpec::new("smooth", LabelKind::SpatialSmooth, 0.0),
            ],
            ..SynthWorldSpec::default()
        })
        .unwrap()
    }

    fn inputs(w: &SynthWorld) -> Inputs<'_> {
        Inputs {
            hierarchy: &w.hierarchy,
            signatures: &w.signatures,
            labels: &w.zip_labels,
            county_labels: &w.county_labels,
            split: None,
        }
    }

    #[test]
    fn leakage_check_levels() {
        let w = world(1);
        let h = &w.hierarchy;
        let zips: Vec<ZipCode> = h.zips().iter().map(|z| z.zip).collect();
        let county = h.zips()[0].county;
        let (same, other): (Vec<ZipCode>, Vec<ZipCode>) =
            zips.iter().partition(|z| h.county_of(z) == Some(county));
        assert!(same.len() >= 2);
        assert!(check_no_leakage(h, &same[..1], &same[1..], BlockLevel::Zip).is_ok());
        let err = check_no_leakage(h, &same[..1], &same[1..], BlockLevel::County).unwrap_err();
        assert!(matches!(err, Error::Leakage { count: 1, .. }));
        assert!(check_no_leakage(h, &same, &other, BlockLevel::County).is_ok());
        assert!(check_no_leakage(h, &same, &other, BlockLevel::State).is_err());
    }

    #[test]
    fn corrupted_split_is_rejected() {
        let w = world(2);
        let mut split = county_holdout_split(&w.hierarchy, 2, 0.2, 5).unwrap();
        let test_zip = *split.members(Assignment::Test).iter().find(|z| {
            let c = w.hierarchy.county_of(z).unwrap();
            w.hierarchy.county(&c).unwrap().zips.len() > 1
        }).unwrap();
        split.fold_of.insert(test_zip, Assignment::Fold(0));
        let mut config = TaskConfig::new(TaskKind::Imputation);
        config.variables = vec!["linear".into()];
        let inputs = Inputs { split: Some(&split), ..inputs(&w) };
        assert!(matches!(run_imputation(&inputs, &config), Err(Error::Leakage { .. })));
    }

    #[test]
    fn constant_labels_have_zero_variance() {
        let w = world(3);
        let mut flat = w.zip_labels[0].clone();
        flat.values.values_mut().for_each(|v| *v = 2.5);
        let labels = [flat];
        let config = TaskConfig::new(TaskKind::Imputation);
        let inputs = Inputs { labels: &labels, ..inputs(&w) };
        assert!(matches!(run_imputation(&inputs, &config), Err(Error::ZeroVariance)));
    }

    #[test]
    fn pair_needs_targets_and_known_sources() {
        let w = world(4);
        let mut config = TaskConfig::new(TaskKind::ExtrapolationPair);
        config.source_states = w.hierarchy.states().map(|(s, _)| *s).collect();
        assert!(matches!(run_extrapolation_pair(&inputs(&w), &config), Err(Error::EmptyTestSet)));
        config.source_states = vec!["02".parse().unwrap()];
        assert!(matches!(run_extrapolation_pair(&inputs(&w), &config), Err(Error::BadParameter(_))));
    }

    #[test]
    fn report_shapes() {
        let w = world(5);
        let ins = inputs(&w);
        let imp = run_imputation(&ins, &TaskConfig::new(TaskKind::Imputation)).unwrap();
        assert_eq!(imp.reports.len(), 6);
        for r in &imp.reports {
            assert_eq!(r.per_fold_r2.len(), 5);
            assert!(r.test_r2.is_some() && r.n_test > 0);
            assert_eq!(r.runtime_s, 0.0);
            assert_eq!(r.lambda.is_some(), r.model == "topsearch_ridge");
        }
        let linear_ridge = imp.reports.iter().find(|r| r.variable == "linear" && r.model == "topsearch_ridge");
        assert!(linear_ridge.unwrap().test_r2.unwrap() > 0.99);

        let mut cfg = TaskConfig::new(TaskKind::ExtrapolationStates);
        cfg.folds = 4;
        let states = run_extrapolation_states(&ins, &cfg).unwrap();
        assert!(states.reports.iter().all(|r| r.per_fold_r2.len() == 4 && r.test_r2.is_none()));

        let sup = run_superres(&ins, &TaskConfig::new(TaskKind::Superres)).unwrap();
        assert_eq!(sup.reports.len(), 12);
        assert!(sup.reports.iter().any(|r| r.filter == Some(POPULATION_THRESHOLD)));
    }

    #[test]
    fn ablation_full_fraction_matches_imputation() {
        let w = world(6);
        let ins = inputs(&w);
        let mut imp_cfg = TaskConfig::new(TaskKind::Imputation);
        imp_cfg.models = vec![ModelKind::TopsearchRidge];
        imp_cfg.variables = vec!["linear".into()];
        let imp = run_imputation(&ins, &imp_cfg).unwrap();
        let mut cfg = TaskConfig { task: TaskKind::Ablation, ..imp_cfg };
        cfg.train_fractions = vec![1.0];
        cfg.feature_dims = vec![w.signatures.dim()];
        let abl = run_ablation(&ins, &cfg).unwrap();
        let t = imp.reports[0].test_r2.unwrap();
        assert_eq!(abl.reports[0].model, "topsearch_ridge_frac1.00");
        assert_eq!(abl.reports[1].model, format!("topsearch_ridge_dim{}", w.signatures.dim()));
        for r in &abl.reports {
            assert_eq!(r.test_r2.unwrap(), t);
        }
    }

    #[test]
    fn deterministic_across_job_counts() {
        let w = world(7);
        let ins = inputs(&w);
        for task in [TaskKind::Imputation, TaskKind::ExtrapolationStates, TaskKind::Superres] {
            let mut cfg = TaskConfig::new(task);
            if task == TaskKind::ExtrapolationStates {
                cfg.folds = 4;
            }
            let a = run_task(&ins, &cfg).unwrap();
            cfg.jobs = 3;
            let b = run_task(&ins, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn aggregate_excludes_two_lowest() {
        let mk = |v: &str, r2: f64| EvalReport {
            task: TaskKind::Imputation,
            variable: v.into(),
            model: "idw".into(),
            filter: None,
            seed: 0,
            lambda: None,
            per_fold_r2: vec![r2],
            test_r2: Some(r2),
            n_train: 1,
            n_test: 1,
            runtime_s: 0.0,
        };
        let reports = vec![mk("a", -1.0), mk("b", 0.2), mk("c", 0.6), mk("d", 0.8)];
        let agg = aggregate(&reports);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].mean - 0.15).abs() < 1e-12);
        assert!((agg[0].mean_excluding_two_lowest.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!((agg[0].min, agg[0].max), (-1.0, 0.8));
        assert!((agg[0].median - 0.4).abs() < 1e-12);
        let (summary, table) = summary_tables(&reports);
        assert_eq!(summary.lines().count(), 5);
        assert!(table.contains("idw,,4,0.150000,0.700000,-1.00000,0.400000,0.800000"));
    }
}
