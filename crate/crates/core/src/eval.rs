//! Coefficient of determination and result tables.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codes::RegionCode;
use crate::error::{Error, Result};
use crate::io::{fmt6, write_atomic, write_value_table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Imputation,
    ExtrapolationStates,
    ExtrapolationPair,
    Superres,
    Ablation,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Imputation => "imputation",
            TaskKind::ExtrapolationStates => "extrapolation_states",
            TaskKind::ExtrapolationPair => "extrapolation_pair",
            TaskKind::Superres => "superres",
            TaskKind::Ablation => "ablation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TaskKind::Imputation,
            TaskKind::ExtrapolationStates,
            TaskKind::ExtrapolationPair,
            TaskKind::Superres,
            TaskKind::Ablation,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::BadParameter(format!("unknown task `{s}`")))
    }
}

/// Result of one (task, variable, model) evaluation.
///
/// `per_fold_r2` holds one entry per CV fold (or per seed for ablation
/// points, or the single split for one-shot tasks). `n_train`/`n_test`
/// count labeled zips used for fitting and for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub variable: String,
    pub model: String,
    pub filter: Option<u64>,
    pub seed: u64,
    pub lambda: Option<f64>,
    #[serde(rename = "per_fold")]
    pub per_fold_r2: Vec<f64>,
    pub test_r2: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub runtime_s: f64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if self.per_fold_r2.is_empty() {
            return Err(Error::IncompleteReport("empty per-fold list"));
        }
        let r2s = self.per_fold_r2.iter().chain(self.test_r2.iter());
        for r in r2s {
            if !r.is_finite() || *r > 1.0 + 1e-12 {
                return Err(Error::IncompleteReport("R² must be finite and at most 1"));
            }
        }
        if !self.runtime_s.is_finite() || self.lambda.is_some_and(|l| !l.is_finite()) {
            return Err(Error::IncompleteReport("non-finite lambda or runtime"));
        }
        Ok(())
    }

    /// Stem shared by every file of this result.
    pub fn file_stem(&self) -> String {
        let mut stem = format!("{}_{}_{}", self.task, self.variable, self.model);
        if let Some(f) = self.filter {
            stem.push_str(&format!("_pop{f}"));
        }
        stem
    }
}

/// `1 − SS_res / SS_tot`, with the mean taken over `actual`.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot <= f64::EPSILON * mean.abs().max(1.0) * actual.len() as f64 * f64::EPSILON {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fails with `ZeroVariance` when `values` are all equal.
pub fn check_variance(values: &[f64]) -> Result<()> {
    match values.split_first() {
        Some((first, rest)) if rest.iter().any(|v| v != first) => Ok(()),
        _ => Err(Error::ZeroVariance),
    }
}

/// One row of a scatter table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub region_id: RegionCode,
    pub actual: f64,
    pub predicted: f64,
}

/// Writes `region_id,actual,predicted` sorted by region.
pub fn export_scatter(rows: &[ScatterRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("scatter rows"));
    }
    let mut sorted: Vec<&ScatterRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    let mut out = String::from("region_id,actual,predicted\n");
    for r in sorted {
        out.push_str(&format!("{},{},{}\n", r.region_id, fmt6(r.actual), fmt6(r.predicted)));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes `region_id,value` sorted by region.
pub fn export_choropleth<I>(values: I, path: &Path) -> Result<()>
where
    I: IntoIterator<Item = (RegionCode, f64)>,
{
    let rows: Vec<(String, f64)> = values.into_iter().map(|(r, v)| (r.to_string(), v)).collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("choropleth values"));
    }
    write_value_table(path, "region_id,value", rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    #[test]
    fn r_squared_reference_values() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(r_squared(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
        assert!(matches!(r_squared(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn r_squared_is_unbounded_below() {
        let actual = [1.0, 2.0, 3.0, 4.0];
        let shifted: Vec<f64> = actual.iter().map(|a| a + 1000.0).collect();
        assert!(r_squared(&actual, &shifted).unwrap() < -1e5);
    }

    #[test]
    fn scatter_and_choropleth_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scatter.csv");
        let rows = vec![
            ScatterRow { region_id: "00002".parse().unwrap(), actual: 1.0, predicted: 0.5 },
            ScatterRow { region_id: "00001".parse().unwrap(), actual: 2.0, predicted: 2.0 },
        ];
        export_scatter(&rows, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "region_id,actual,predicted\n00001,2.00000,2.00000\n00002,1.00000,0.500000\n"
        );
        assert!(matches!(export_scatter(&[], &p), Err(Error::EmptyInput(_))));

        let c = dir.path().join("choropleth.csv");
        export_choropleth([("00009".parse().unwrap(), 3.0)], &c).unwrap();
        assert_eq!(fs::read_to_string(&c).unwrap(), "region_id,value\n00009,3.00000\n");
        let a = vec![("00002".parse().unwrap(), 1.0), ("00001".parse().unwrap(), 2.0)];
        export_choropleth(a.clone(), &c).unwrap();
        let first = fs::read(&c).unwrap();
        export_choropleth(a.into_iter().rev(), &c).unwrap();
        assert_eq!(fs::read(&c).unwrap(), first);
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            seed in any::<u64>(),
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            prop_assume!(check_variance(&a).is_ok());
            let mut idx: Vec<usize> = (0..a.len()).collect();
            crate::rng::SplitMix64::new(seed).shuffle(&mut idx);
            let ap: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let r1 = r_squared(&a, &p).unwrap();
            let r2 = r_squared(&ap, &pp).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-9 * r1.abs().max(1.0));
            prop_assert!(r1 <= 1.0);
        }

        #[test]
        fn larger_residuals_never_score_higher(
            pairs in proptest::collection::vec((-10.0f64..10.0, -3.0f64..3.0, 1.0f64..3.0), 3..30),
        ) {
            let a: Vec<f64> = pairs.iter().map(|t| t.0).collect();
            prop_assume!(check_variance(&a).is_ok());
            let good: Vec<f64> = pairs.iter().map(|t| t.0 + t.1).collect();
            let worse: Vec<f64> = pairs.iter().map(|t| t.0 + t.1 * t.2).collect();
            prop_assert!(r_squared(&a, &worse).unwrap() <= r_squared(&a, &good).unwrap() + 1e-12);
        }
    }
}
