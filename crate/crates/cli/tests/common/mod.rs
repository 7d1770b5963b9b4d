#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn topsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topsearch"))
        .args(args)
        .output()
        .expect("spawn topsearch")
}

pub fn ok(args: &[&str]) {
    let out = topsearch(args);
    assert!(
        out.status.success(),
        "topsearch {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A small world written by `synth`, plus its signatures and split.
pub struct World {
    pub dir: PathBuf,
}

impl World {
    pub fn create(root: &Path, seed: u64) -> World {
        let dir = root.join("world");
        let seed = seed.to_string();
        ok(&[
            "synth", "--out", p(&dir), "--seed", &seed, "--n-states", "12", "--n-counties", "90",
            "--n-zips", "700", "--vocab-size", "40", "--n-queries", "200",
            "--label", "income:linear:r2=0.8", "--label", "elev:smooth",
        ]);
        ok(&[
            "build-vocab", "--query-log", p(&dir.join("query_log.csv")), "--vocab-size", "40",
            "--out", p(&dir.join("vocab")),
        ]);
        ok(&[
            "vectorize", "--query-log", p(&dir.join("query_log.csv")),
            "--vocab", p(&dir.join("vocab/vocabulary.csv")),
            "--geography", p(&dir.join("geography.csv")), "--overlaps", p(&dir.join("overlaps.csv")),
            "--out", p(&dir.join("sig")),
        ]);
        World { dir }
    }

    pub fn file(&self, name: &str) -> String {
        p(&self.dir.join(name)).to_string()
    }

    /// Shared flags of the task subcommands.
    pub fn task_args(&self) -> Vec<String> {
        [
            "--geography", &self.file("geography.csv"),
            "--overlaps", &self.file("overlaps.csv"),
            "--signatures", &self.file("sig/signatures.csv"),
            "--labels", &self.file("labels_income.csv"),
            "--labels", &self.file("labels_elev.csv"),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}
