use std::path::Path;

use super::{file_label, fmt6, malformed, parse_code, parse_real, parse_rows, read_text, write_atomic};
use crate::error::Result;
use crate::signature::{SignatureSet, SignatureStatus, VocabEntry, Vocabulary, SIGNATURE_TOTAL};

pub const VOCAB_HEADER: [&str; 4] = ["feature_index", "query_text", "region_coverage", "total_count"];

/// Relative tolerance on the sum of a signature read back from disk; each
/// entry carries up to half a unit in the sixth significant digit.
const SUM_TOLERANCE: f64 = 1e-4;

pub fn write_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = VOCAB_HEADER.join(",");
    out.push('\n');
    for e in vocab.entries() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.feature_index, e.query_text, e.region_coverage, e.total_count
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = read_text(path)?;
    let file = file_label(path);
    let int = |line: usize, s: &str| -> Result<u64> {
        s.trim()
            .parse()
            .map_err(|_| malformed(&file, line, format!("bad integer `{s}`")))
    };
    let entries = parse_rows(&text, &file, &VOCAB_HEADER)?
        .into_iter()
        .map(|row| {
            Ok(VocabEntry {
                feature_index: int(row.line, row.fields[0])? as usize,
                query_text: row.fields[1].to_string(),
                region_coverage: int(row.line, row.fields[2])?,
                total_count: int(row.line, row.fields[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Vocabulary::new(entries)
}

pub fn write_signatures(set: &SignatureSet, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(set.len() * (set.dim() * 9 + 24) + 64);
    out.push_str("region_id,status");
    for j in 0..set.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (region, status, row) in set.iter() {
        out.push_str(region.as_str());
        out.push(',');
        out.push_str(&status.to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt6(*v));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_signatures(path: &Path) -> Result<SignatureSet> {
    let text = read_text(path)?;
    let file = file_label(path);
    let rows = parse_rows(&text, &file, &["region_id", "status", "*"])?;
    let head: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
    let dim = head.len() - 2;
    for (j, name) in head[2..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(malformed(&file, 1, format!("expected column f{j}, found `{name}`")));
        }
    }
    let mut set = SignatureSet::new(dim);
    let mut values = vec![0.0; dim];
    for row in rows {
        let region = parse_code(&file, row.line, row.fields[0])?;
        let status: SignatureStatus = row.fields[1]
            .parse()
            .map_err(|_| malformed(&file, row.line, "bad status"))?;
        for (slot, s) in values.iter_mut().zip(&row.fields[2..]) {
            *slot = parse_real(&file, row.line, s)?;
            if *slot < 0.0 {
                return Err(malformed(&file, row.line, "negative signature entry"));
            }
        }
        let sum: f64 = values.iter().sum();
        if status != SignatureStatus::Absent
            && sum != 0.0
            && (sum - SIGNATURE_TOTAL).abs() > SUM_TOLERANCE * SIGNATURE_TOTAL
        {
            return Err(malformed(&file, row.line, format!("signature sums to {sum}")));
        }
        set.push(region, status, &values)
            .map_err(|e| malformed(&file, row.line, e.to_string()))?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::round6;
    use std::fs;

    #[test]
    fn signature_file_layout() {
        let mut set = SignatureSet::new(3);
        set.push("00001".parse().unwrap(), SignatureStatus::Observed, &[400.0 / 9.0, 500.0 / 9.0, 0.0])
            .unwrap();
        set.push("00002".parse().unwrap(), SignatureStatus::Absent, &[0.0; 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("signatures.csv");
        write_signatures(&set, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "region_id,status,f0,f1,f2\n00001,observed,44.4444,55.5556,0.00000\n00002,absent,0.00000,0.00000,0.00000\n"
        );
        let back = read_signatures(&p).unwrap();
        assert_eq!(back.row(0), &[round6(400.0 / 9.0), round6(500.0 / 9.0), 0.0]);
        assert_eq!(back.status(1), SignatureStatus::Absent);
    }

    #[test]
    fn rejects_bad_sums_and_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("signatures.csv");
        fs::write(&p, "region_id,status,f0,f1\n00001,observed,10,20\n").unwrap();
        assert!(read_signatures(&p).is_err());
        fs::write(&p, "region_id,status,f0,f2\n00001,observed,50,50\n").unwrap();
        assert!(read_signatures(&p).is_err());
        fs::write(&p, "region_id,status,f0,f1\n00001,observed,150,-50\n").unwrap();
        assert!(read_signatures(&p).is_err());
    }

    #[test]
    fn vocabulary_round_trip() {
        let v = Vocabulary::new(vec![
            VocabEntry { feature_index: 0, query_text: "weather".into(), region_coverage: 3, total_count: 8 },
            VocabEntry { feature_index: 1, query_text: "youtube".into(), region_coverage: 2, total_count: 90 },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.csv");
        write_vocabulary(&v, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "feature_index,query_text,region_coverage,total_count\n0,weather,3,8\n1,youtube,2,90\n"
        );
        assert_eq!(read_vocabulary(&p).unwrap(), v);
    }
}
