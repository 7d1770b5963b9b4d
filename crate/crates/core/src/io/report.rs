use std::fmt::Write as _;
use std::path::Path;

use super::{fmt6, read_text, write_atomic};
use crate::error::Result;
use crate::eval::EvalReport;

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), fmt6)
}

/// Serializes a report with a fixed key order and six-digit reals.
pub fn render_report(report: &EvalReport) -> Result<String> {
    report.validate()?;
    let per_fold: Vec<String> = report.per_fold_r2.iter().map(|v| fmt6(*v)).collect();
    let mut out = String::from("{\n");
    let mut field = |key: &str, value: String, last: bool| {
        let sep = if last { "" } else { "," };
        writeln!(out, "  \"{key}\": {value}{sep}").expect("write to string");
    };
    field("task", serde_json::to_string(report.task.name())?, false);
    field("variable", serde_json::to_string(&report.variable)?, false);
    field("model", serde_json::to_string(&report.model)?, false);
    field(
        "filter",
        report.filter.map_or_else(|| "null".to_string(), |f| f.to_string()),
        false,
    );
    field("seed", report.seed.to_string(), false);
    field("lambda", opt_real(report.lambda), false);
    field("per_fold", format!("[{}]", per_fold.join(", ")), false);
    field("test_r2", opt_real(report.test_r2), false);
    field("n_train", report.n_train.to_string(), false);
    field("n_test", report.n_test.to_string(), false);
    field("runtime_s", fmt6(report.runtime_s), true);
    out.push_str("}\n");
    Ok(out)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = render_report(report)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = read_text(path)?;
    let report: EvalReport = serde_json::from_str(&text)?;
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::eval::TaskKind;

    fn report() -> EvalReport {
        EvalReport {
            task: TaskKind::Imputation,
            variable: "income".into(),
            model: "topsearch_ridge".into(),
            filter: Some(3000),
            seed: 7,
            lambda: Some(0.001),
            per_fold_r2: vec![0.5, 0.75],
            test_r2: Some(0.5),
            n_train: 80,
            n_test: 20,
            runtime_s: 0.0,
        }
    }

    #[test]
    fn fixed_layout() {
        let text = render_report(&report()).unwrap();
        assert_eq!(
            text,
            "{\n  \"task\": \"imputation\",\n  \"variable\": \"income\",\n  \"model\": \"topsearch_ridge\",\n  \"filter\": 3000,\n  \"seed\": 7,\n  \"lambda\": 0.00100000,\n  \"per_fold\": [0.500000, 0.750000],\n  \"test_r2\": 0.500000,\n  \"n_train\": 80,\n  \"n_test\": 20,\n  \"runtime_s\": 0.00000\n}\n"
        );
    }

    #[test]
    fn byte_stable_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        write_report(&report(), &a).unwrap();
        write_report(&report(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_report(&a).unwrap(), report());

        let mut r = report();
        r.filter = None;
        r.lambda = None;
        r.test_r2 = None;
        write_report(&r, &a).unwrap();
        assert_eq!(read_report(&a).unwrap(), r);
    }

    #[test]
    fn empty_per_fold_is_rejected() {
        let mut r = report();
        r.per_fold_r2.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_report(&r, &dir.path().join("r.json")),
            Err(Error::IncompleteReport(_))
        ));
    }
}
