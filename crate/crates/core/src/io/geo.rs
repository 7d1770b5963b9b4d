use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{fmt6, file_label, malformed, parse_code, parse_real, parse_rows, read_text, write_atomic};
use crate::codes::ZipCode;
use crate::error::{Error, Result};
use crate::spatial::{Assignment, LatLon, Overlap, SplitKind, SplitSpec, ZipRecord};

pub const GEOGRAPHY_HEADER: [&str; 7] = [
    "zip_id",
    "county_fips",
    "state_fips",
    "lat",
    "lon",
    "population",
    "land_area_km2",
];
pub const OVERLAPS_HEADER: [&str; 3] = ["zip_id", "county_fips", "overlap_km2"];
pub const SPLIT_HEADER: [&str; 2] = ["zip_id", "assignment"];
pub const SPLIT_META_HEADER: [&str; 2] = ["key", "value"];

pub fn read_geography(path: &Path) -> Result<Vec<ZipRecord>> {
    let text = read_text(path)?;
    let file = file_label(path);
    parse_rows(&text, &file, &GEOGRAPHY_HEADER)?
        .into_iter()
        .map(|row| {
            let f = &row.fields;
            let population = f[5]
                .trim()
                .parse()
                .map_err(|_| malformed(&file, row.line, "population must be a nonnegative integer"))?;
            let rec = ZipRecord {
                zip: parse_code(&file, row.line, f[0])?,
                county: parse_code(&file, row.line, f[1])?,
                state: parse_code(&file, row.line, f[2])?,
                centroid: LatLon::new(
                    parse_real(&file, row.line, f[3])?,
                    parse_real(&file, row.line, f[4])?,
                ),
                population,
                land_area_km2: parse_real(&file, row.line, f[6])?,
            };
            if !rec.centroid.is_valid() {
                return Err(malformed(&file, row.line, "lat/lon out of range"));
            }
            if rec.land_area_km2 <= 0.0 {
                return Err(malformed(&file, row.line, "land area must be positive"));
            }
            Ok(rec)
        })
        .collect()
}

pub fn write_geography(zips: &[ZipRecord], path: &Path) -> Result<()> {
    let mut rows: Vec<&ZipRecord> = zips.iter().collect();
    rows.sort_by(|a, b| a.zip.cmp(&b.zip));
    let mut out = GEOGRAPHY_HEADER.join(",");
    out.push('\n');
    for z in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            z.zip,
            z.county,
            z.state,
            fmt6(z.centroid.lat),
            fmt6(z.centroid.lon),
            z.population,
            fmt6(z.land_area_km2)
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_overlaps(path: &Path) -> Result<Vec<Overlap>> {
    let text = read_text(path)?;
    let file = file_label(path);
    let mut seen = BTreeSet::new();
    parse_rows(&text, &file, &OVERLAPS_HEADER)?
        .into_iter()
        .map(|row| {
            let o = Overlap {
                zip: parse_code(&file, row.line, row.fields[0])?,
                county: parse_code(&file, row.line, row.fields[1])?,
                overlap_km2: parse_real(&file, row.line, row.fields[2])?,
            };
            if o.overlap_km2 < 0.0 {
                return Err(malformed(&file, row.line, "negative overlap"));
            }
            if !seen.insert((o.zip, o.county)) {
                return Err(Error::DuplicateKey(o.zip.to_string(), o.county.to_string()));
            }
            Ok(o)
        })
        .collect()
}

pub fn write_overlaps(overlaps: &[Overlap], path: &Path) -> Result<()> {
    let mut rows: Vec<&Overlap> = overlaps.iter().collect();
    rows.sort_by(|a, b| (a.zip, a.county).cmp(&(b.zip, b.county)));
    let mut out = OVERLAPS_HEADER.join(",");
    out.push('\n');
    for o in rows {
        out.push_str(&format!("{},{},{}\n", o.zip, o.county, fmt6(o.overlap_km2)));
    }
    write_atomic(path, out.as_bytes())
}

/// Path of the metadata sidecar that accompanies a split table.
pub fn split_meta_path(split: &Path) -> std::path::PathBuf {
    let stem = split
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".into());
    split.with_file_name(format!("{stem}_meta.csv"))
}

/// Writes `split.csv` and its `split_meta.csv` sidecar.
pub fn write_split(split: &SplitSpec, path: &Path) -> Result<()> {
    let mut out = SPLIT_HEADER.join(",");
    out.push('\n');
    for (z, a) in &split.fold_of {
        out.push_str(&format!("{z},{a}\n"));
    }
    write_atomic(path, out.as_bytes())?;

    let mut meta = SPLIT_META_HEADER.join(",");
    meta.push('\n');
    meta.push_str(&format!("kind,{}\n", split.kind));
    meta.push_str(&format!("seed,{}\n", split.seed));
    meta.push_str(&format!("k,{}\n", split.k));
    meta.push_str(&format!(
        "holdout_frac,{}\n",
        split.holdout_frac.map(fmt6).unwrap_or_default()
    ));
    meta.push_str(&format!(
        "filter,{}\n",
        split.filter.map(|f| f.to_string()).unwrap_or_default()
    ));
    let counties: Vec<String> = split.holdout_counties.iter().map(|c| c.to_string()).collect();
    meta.push_str(&format!("holdout_counties,{}\n", counties.join(" ")));
    write_atomic(&split_meta_path(path), meta.as_bytes())
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = read_text(path)?;
    let file = file_label(path);
    let mut fold_of = BTreeMap::new();
    for row in parse_rows(&text, &file, &SPLIT_HEADER)? {
        let zip: ZipCode = parse_code(&file, row.line, row.fields[0])?;
        let a: Assignment = row.fields[1]
            .parse()
            .map_err(|_| malformed(&file, row.line, format!("bad assignment `{}`", row.fields[1])))?;
        if fold_of.insert(zip, a).is_some() {
            return Err(Error::DuplicateKey(zip.to_string(), "split".into()));
        }
    }

    let meta_path = split_meta_path(path);
    let meta_text = read_text(&meta_path)?;
    let meta_file = file_label(&meta_path);
    let mut meta = BTreeMap::new();
    for row in parse_rows(&meta_text, &meta_file, &SPLIT_META_HEADER)? {
        meta.insert(row.fields[0].to_string(), (row.line, row.fields[1].to_string()));
    }
    let get = |key: &str| -> Result<(usize, String)> {
        meta.get(key)
            .cloned()
            .ok_or_else(|| Error::BadParameter(format!("{meta_file}: missing key `{key}`")))
    };
    let (line, kind) = get("kind")?;
    let kind: SplitKind = kind.parse().map_err(|_| malformed(&meta_file, line, "bad kind"))?;
    let (line, seed) = get("seed")?;
    let seed = seed.parse().map_err(|_| malformed(&meta_file, line, "bad seed"))?;
    let (line, k) = get("k")?;
    let k = k.parse().map_err(|_| malformed(&meta_file, line, "bad k"))?;
    let (line, frac) = get("holdout_frac")?;
    let holdout_frac = if frac.is_empty() {
        None
    } else {
        Some(parse_real(&meta_file, line, &frac)?)
    };
    let (line, filter) = get("filter")?;
    let filter = if filter.is_empty() {
        None
    } else {
        Some(filter.parse().map_err(|_| malformed(&meta_file, line, "bad filter"))?)
    };
    let (line, counties) = get("holdout_counties")?;
    let holdout_counties = counties
        .split_whitespace()
        .map(|c| parse_code(&meta_file, line, c))
        .collect::<Result<_>>()?;
    Ok(SplitSpec {
        kind,
        seed,
        k,
        holdout_frac,
        holdout_counties,
        fold_of,
        filter,
    })
}
