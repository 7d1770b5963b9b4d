use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use topsearch_core::harness::{run_task, summary_tables, write_run, Inputs, TaskConfig};
use topsearch_core::io::{
    load_labels, load_query_log, read_geography, read_overlaps, read_report, read_signatures,
    read_split, read_vocabulary, write_atomic, write_signatures, write_split, write_vocabulary,
};
use topsearch_core::models::default_lambda_grid;
use topsearch_core::signature::{build_vocabulary, top_queries_per_region, vectorize_all};
use topsearch_core::spatial::{county_holdout_split, population_filter};
use topsearch_core::synth::{generate_world, write_world, LabelKind, LabelSpec, QueryModel, SynthWorldSpec};
use topsearch_core::{
    DatasetManifest, Error, EvalReport, IdwParams, LabelLevel, LabelTable, RegionHierarchy,
    Result, TaskKind,
};

use crate::args::*;

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(command, a),
        Command::BuildVocab(a) => build_vocab(command, a),
        Command::Vectorize(a) => vectorize(command, a),
        Command::Split(a) => split(command, a),
        Command::Impute(a) => task(command, a, TaskKind::Imputation, |_, _| Ok(())),
        Command::Extrapolate(a) => {
            let kind = match a.mode {
                ExtrapolationMode::States => TaskKind::ExtrapolationStates,
                ExtrapolationMode::Pair => TaskKind::ExtrapolationPair,
            };
            task(command, &a.task, kind, |c, _| {
                c.source_states = a.source_states.clone();
                Ok(())
            })
        }
        Command::Superres(a) => superres(command, a),
        Command::Ablate(a) => task(command, &a.task, TaskKind::Ablation, |c, dim| {
            c.train_fractions = a.train_fractions.clone();
            c.ablation_seeds = a.ablation_seeds;
            c.feature_dims = if a.feature_dims.is_empty() {
                let mut dims: Vec<usize> = a
                    .train_fractions
                    .iter()
                    .map(|f| ((f * dim as f64).round() as usize).clamp(1, dim))
                    .collect();
                dims.sort_unstable();
                dims.dedup();
                dims
            } else {
                a.feature_dims.clone()
            };
            Ok(())
        }),
        Command::Report(a) => report(command, a),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

/// Writes `config.json`: the parsed arguments plus every resolved setting.
fn echo_config(dir: &Path, command: &Command, resolved: impl Serialize) -> Result<()> {
    let doc = serde_json::json!({
        "command": command.name(),
        "args": command,
        "resolved": resolved,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(&dir.join("config.json"), text.as_bytes())
}

fn load_hierarchy(geo: &GeoArgs) -> Result<RegionHierarchy> {
    let zips = read_geography(&geo.geography)?;
    match &geo.overlaps {
        Some(p) => RegionHierarchy::with_overlaps(zips, &read_overlaps(p)?),
        None => RegionHierarchy::new(zips),
    }
}

fn manifest(m: &ManifestArgs) -> DatasetManifest {
    DatasetManifest {
        time_window: m.time_window.clone(),
        vocab_size: m.vocab_size,
        per_region_top: m.per_region_top,
        min_count: m.min_count,
        sparsity_threshold: m.sparsity_threshold,
        ..DatasetManifest::default()
    }
}

fn parse_label(text: &str) -> Result<LabelSpec> {
    let bad = || Error::BadParameter(format!("bad label spec `{text}`"));
    let mut parts = text.split(':');
    let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(bad)?;
    let kind = match parts.next().ok_or_else(bad)? {
        "linear" | "linear_in_signature" => LabelKind::LinearInSignature,
        "smooth" | "spatial_smooth" => LabelKind::SpatialSmooth,
        "shifted" | "state_shifted" => LabelKind::StateShifted,
        "noise" => LabelKind::Noise,
        _ => return Err(bad()),
    };
    let mut spec = LabelSpec::new(name, kind, if kind == LabelKind::Noise { 1.0 } else { 0.0 });
    for opt in parts {
        let (key, value) = opt.split_once('=').ok_or_else(bad)?;
        match key {
            "sigma" => spec.sigma = value.parse().map_err(|_| bad())?,
            "r2" => spec = spec.with_target_r2(value.parse().map_err(|_| bad())?),
            "seed" => spec = spec.with_coef_seed(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    Ok(spec)
}

fn synth(command: &Command, a: &SynthArgs) -> Result<()> {
    let defaults = SynthWorldSpec::default();
    let labels = if a.labels.is_empty() {
        defaults.labels.clone()
    } else {
        a.labels.iter().map(|l| parse_label(l)).collect::<Result<_>>()?
    };
    let spec = SynthWorldSpec {
        seed: a.seed,
        n_states: a.n_states,
        n_counties: a.n_counties,
        n_zips: a.n_zips,
        query: QueryModel { n_queries: a.n_queries, ..defaults.query.clone() },
        labels,
        absent_rate: a.absent_rate,
        manifest: DatasetManifest { vocab_size: a.vocab_size, ..defaults.manifest.clone() },
        ..defaults
    };
    let world = generate_world(&spec)?;
    prepare_out(&a.out.out)?;
    write_world(&world, &a.out.out)?;
    echo_config(&a.out.out, command, &spec)
}

fn build_vocab(command: &Command, a: &BuildVocabArgs) -> Result<()> {
    let m = manifest(&a.manifest);
    m.validate()?;
    let log = load_query_log(&a.query_log)?;
    let top = top_queries_per_region(&log, m.per_region_top, m.min_count);
    let vocab = build_vocabulary(&top, &log, m.vocab_size)?;
    prepare_out(&a.out.out)?;
    write_vocabulary(&vocab, &a.out.out.join("vocabulary.csv"))?;
    echo_config(&a.out.out, command, &m)
}

fn vectorize(command: &Command, a: &VectorizeArgs) -> Result<()> {
    let h = load_hierarchy(&a.geo)?;
    let log = load_query_log(&a.query_log)?;
    let vocab = read_vocabulary(&a.vocab)?;
    if let Some((r, _)) = log.regions().find(|(r, _)| h.zip_index(r).is_none()) {
        return Err(Error::UnknownRegion(r.to_string()));
    }
    let set = vectorize_all(&log, &vocab, &h, a.sparsity_threshold)?;
    prepare_out(&a.out.out)?;
    write_signatures(&set, &a.out.out.join("signatures.csv"))?;
    echo_config(&a.out.out, command, serde_json::json!({ "dim": set.dim() }))
}

fn split(command: &Command, a: &SplitArgs) -> Result<()> {
    let h = load_hierarchy(&a.geo)?;
    let mut spec = county_holdout_split(&h, a.seed, a.holdout_frac, a.folds)?;
    if let Some(t) = a.pop.threshold() {
        spec = spec.restrict(&population_filter(&h, t), Some(t));
    }
    prepare_out(&a.out.out)?;
    write_split(&spec, &a.out.out.join("split.csv"))?;
    echo_config(
        &a.out.out,
        command,
        serde_json::json!({ "holdout_counties": spec.holdout_counties.len() }),
    )
}

fn load_tables(paths: &[PathBuf], variable: Option<&str>, level: LabelLevel, h: &RegionHierarchy) -> Result<Vec<LabelTable>> {
    if variable.is_some() && paths.len() != 1 {
        return Err(Error::BadParameter("--variable needs exactly one label file".into()));
    }
    paths.iter().map(|p| load_labels(p, level, variable, h)).collect()
}

fn task_config(a: &TaskArgs, kind: TaskKind) -> TaskConfig {
    let mut c = TaskConfig::new(kind);
    c.seed = a.seed;
    if let Some(f) = a.folds {
        c.folds = f;
    }
    c.inner_folds = a.inner_folds;
    c.holdout_frac = a.holdout_frac;
    c.pop_threshold = a.pop.threshold();
    if !a.model.models.is_empty() {
        c.models = a.model.models.clone();
    }
    c.lambda_grid = if a.model.lambda_grid.is_empty() {
        default_lambda_grid()
    } else {
        a.model.lambda_grid.clone()
    };
    c.idw = IdwParams {
        power: a.model.idw_power,
        neighbors: a.model.idw_k,
        epsilon_km: a.model.idw_epsilon_km,
    };
    c.jobs = a.jobs;
    c.record_runtime = a.record_runtime;
    c
}

fn run(
    command: &Command,
    a: &TaskArgs,
    kind: TaskKind,
    county_labels: &[PathBuf],
    customize: impl FnOnce(&mut TaskConfig, usize) -> Result<()>,
) -> Result<()> {
    let h = load_hierarchy(&a.geo)?;
    let signatures = read_signatures(&a.signatures)?;
    let labels = load_tables(&a.labels, a.variable.as_deref(), LabelLevel::Zip, &h)?;
    let county = if county_labels.is_empty() {
        Vec::new()
    } else {
        load_tables(county_labels, a.variable.as_deref(), LabelLevel::County, &h)?
    };
    let split = a.split.as_deref().map(read_split).transpose()?;
    if let Some(s) = &split {
        s.validate(&h)?;
    }
    let mut config = task_config(a, kind);
    customize(&mut config, signatures.dim())?;
    config.validate()?;
    let inputs = Inputs {
        hierarchy: &h,
        signatures: &signatures,
        labels: &labels,
        county_labels: &county,
        split: split.as_ref(),
    };
    let result = run_task(&inputs, &config)?;
    prepare_out(&a.out.out)?;
    write_run(&result, &a.out.out)?;
    echo_config(&a.out.out, command, &config)
}

fn task(
    command: &Command,
    a: &TaskArgs,
    kind: TaskKind,
    customize: impl FnOnce(&mut TaskConfig, usize) -> Result<()>,
) -> Result<()> {
    run(command, a, kind, &[], customize)
}

fn superres(command: &Command, a: &SuperresArgs) -> Result<()> {
    run(command, &a.task, TaskKind::Superres, &a.county_labels, |_, _| Ok(()))
}

fn report(command: &Command, a: &ReportArgs) -> Result<()> {
    let mut by_task: BTreeMap<TaskKind, Vec<EvalReport>> = BTreeMap::new();
    for dir in &a.inputs {
        let entries = fs::read_dir(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
            })
            .collect();
        paths.sort();
        for p in paths {
            let r = read_report(&p)?;
            by_task.entry(r.task).or_default().push(r);
        }
    }
    if by_task.is_empty() {
        return Err(Error::EmptyInput("report files"));
    }
    prepare_out(&a.out.out)?;
    let mut counts = BTreeMap::new();
    for (task, reports) in &by_task {
        let (summary, agg) = summary_tables(reports);
        write_atomic(&a.out.out.join(format!("summary_{task}.csv")), summary.as_bytes())?;
        write_atomic(&a.out.out.join(format!("aggregate_{task}.csv")), agg.as_bytes())?;
        counts.insert(task.name(), reports.len());
    }
    echo_config(&a.out.out, command, serde_json::json!({ "reports": counts }))
}
