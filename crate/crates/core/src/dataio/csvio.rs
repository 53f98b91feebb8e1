//! Plain-CSV dataset path for small hand-made sets.
//!
//! `windows.csv` has header `window_id,t,c0,...,c{C-1}` and one row per
//! timestep, windows in order. `labels.csv` and `attributes.csv` follow the
//! binary layout's schemas.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{AttributeSchema, Dataset, ATTRIBUTES_FILE, LABELS_FILE, UNKNOWN};
use crate::error::{Error, Result};
use crate::models::Geometry;

pub const WINDOWS_CSV: &str = "windows.csv";

fn parse_u64(field: &str, what: &str) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{what}: {field:?} is not a non-negative integer")))
}

pub(super) fn parse_labels(bytes: &[u8]) -> Result<(Vec<u64>, Vec<u8>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    if header.len() != 2 || &header[0] != "window_id" || &header[1] != "label" {
        return Err(Error::Format("labels.csv header must be window_id,label".into()));
    }
    let (mut ids, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        ids.push(parse_u64(&rec[0], "labels.csv window_id")?);
        let l = parse_u64(&rec[1], "labels.csv label")?;
        if l > 1 {
            return Err(Error::Data(format!("label {l} is not 0 or 1")));
        }
        labels.push(l as u8);
    }
    Ok((ids, labels))
}

/// Reads `attributes.csv`, returning ids and value columns ordered as `names`.
pub(super) fn parse_attributes(bytes: &[u8], names: &[&str]) -> Result<(Vec<u64>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    if header.is_empty() || &header[0] != "window_id" {
        return Err(Error::Format("attributes.csv must start with a window_id column".into()));
    }
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Format(format!("attributes.csv has no column {n:?}")))
        })
        .collect::<Result<_>>()?;
    let mut ids = Vec::new();
    let mut values = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        ids.push(parse_u64(&rec[0], "attributes.csv window_id")?);
        for (v, &c) in values.iter_mut().zip(&cols) {
            let cell = rec.get(c).unwrap_or("").trim();
            v.push(if cell.is_empty() { UNKNOWN.to_string() } else { cell.to_string() });
        }
    }
    Ok((ids, values))
}

/// Writes `windows.csv`, `labels.csv` and `attributes.csv` into `dir`.
pub fn export_csv(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = ds.geometry();
    let mut w = csv::Writer::from_path(dir.join(WINDOWS_CSV))?;
    let mut header = vec!["window_id".to_string(), "t".to_string()];
    header.extend((0..g.channels).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for (i, id) in ds.ids.iter().enumerate() {
        for (t, row) in ds.window(i).chunks_exact(g.channels).enumerate() {
            let mut rec = vec![id.to_string(), t.to_string()];
            // `{}` on f32 prints the shortest string that parses back exactly.
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    if let Some(l) = ds.labels_csv()? {
        fs::write(dir.join(LABELS_FILE), l)?;
    }
    fs::write(dir.join(ATTRIBUTES_FILE), ds.attributes_csv()?)?;
    Ok(())
}

/// Reads a CSV dataset. Geometry is inferred from the rows; each
/// attribute's vocabulary is the sorted set of its non-unknown values.
pub fn import_csv(dir: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(dir.join(WINDOWS_CSV))?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "window_id" || &header[1] != "t" {
        return Err(Error::Format("windows.csv header must be window_id,t,c0,...".into()));
    }
    let channels = header.len() - 2;
    let mut ids: Vec<u64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut windows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let id = parse_u64(&rec[0], "windows.csv window_id")?;
        let t = parse_u64(&rec[1], "windows.csv t")? as usize;
        if ids.last() != Some(&id) {
            if ids.contains(&id) {
                return Err(Error::Format(format!("windows.csv: rows of window {id} are not contiguous")));
            }
            ids.push(id);
            counts.push(0);
        }
        let count = counts.last_mut().unwrap();
        if t != *count {
            return Err(Error::Format(format!("windows.csv: window {id} expected t={count}, found t={t}")));
        }
        *count += 1;
        for c in 0..channels {
            let v: f32 = rec[c + 2]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("windows.csv: {:?} is not a number", &rec[c + 2])))?;
            windows.push(v);
        }
    }
    let timesteps = *counts.first().ok_or_else(|| Error::Format("windows.csv has no rows".into()))?;
    if let Some(bad) = counts.iter().position(|&c| c != timesteps) {
        return Err(Error::Format(format!(
            "window {} has {} timesteps, expected {timesteps}",
            ids[bad], counts[bad]
        )));
    }

    let labels = match fs::read(dir.join(LABELS_FILE)) {
        Ok(bytes) => {
            let (label_ids, labels) = parse_labels(&bytes)?;
            if label_ids != ids {
                return Err(Error::Format("labels.csv lists different window ids than windows.csv".into()));
            }
            Some(labels)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };

    let attr_bytes = fs::read(dir.join(ATTRIBUTES_FILE))?;
    let names: Vec<String> = csv::Reader::from_reader(attr_bytes.as_slice())
        .headers()?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let (attr_ids, values) = parse_attributes(&attr_bytes, &name_refs)?;
    if attr_ids != ids {
        return Err(Error::Format("attributes.csv lists different window ids than windows.csv".into()));
    }
    let schema = names
        .iter()
        .zip(&values)
        .map(|(name, col)| AttributeSchema {
            name: name.clone(),
            segments: col
                .iter()
                .filter(|v| *v != UNKNOWN)
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            privileged: None,
        })
        .collect();
    Dataset::new(Geometry::new(timesteps, channels), ids, windows, labels, schema, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::toy;

    #[test]
    fn csv_path_matches_binary_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(10);
        let bin = dir.path().join("bin");
        let text = dir.path().join("csv");
        ds.save(&bin).unwrap();
        export_csv(&ds, &text).unwrap();
        let a = Dataset::load(&bin).unwrap();
        let b = import_csv(&text).unwrap();
        assert_eq!(a.geometry(), b.geometry());
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.all_attribute_values(), b.all_attribute_values());
        assert_eq!(a.attributes()[0].segments, b.attributes()[0].segments);
        for (x, y) in a.raw_windows().iter().zip(b.raw_windows()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn ragged_windows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(WINDOWS_CSV), "window_id,t,c0\n1,0,0.5\n1,1,0.5\n2,0,1.0\n").unwrap();
        fs::write(dir.path().join(ATTRIBUTES_FILE), "window_id,g\n1,A\n2,B\n").unwrap();
        let err = import_csv(dir.path()).unwrap_err();
        assert!(err.to_string().contains("window 2"), "{err}");
    }
}
