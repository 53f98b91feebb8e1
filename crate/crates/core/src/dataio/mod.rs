//! Dataset storage, splits and the synthetic group-biased generator.
//!
//! A dataset directory holds:
//!
//! - `manifest.json`: geometry, attribute schema, split tags and checksums
//! - `windows.f32`: `n × T × C` little-endian `f32`, row-major, window order
//! - `labels.csv`: `window_id,label` (absent for unlabeled sets)
//! - `attributes.csv`: `window_id,<attribute>...`, one segment label per cell

mod csvio;
mod split;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::{f32_bytes, read_f32s, sha256_hex};
use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::models::Geometry;

pub use csvio::{export_csv, import_csv};
pub use split::{stratified_split, SplitFractions, SplitOutcome};
pub use synth::{generate_synthetic, BurstSpec, SynthAttribute, SynthSegment, SynthSpec};

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Overrides the base directory for relative dataset paths.
pub const DATA_ROOT_ENV: &str = "FAIRSSL_DATA_ROOT";
/// Segment value for windows whose attribute is not recorded.
pub const UNKNOWN: &str = "unknown";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WINDOWS_FILE: &str = "windows.f32";
pub const LABELS_FILE: &str = "labels.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}; expected train, val or test"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSchema {
    pub name: String,
    /// Segment vocabulary, excluding [`UNKNOWN`].
    pub segments: Vec<String>,
    #[serde(default)]
    pub privileged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Checksums {
    pub windows: String,
    pub labels: Option<String>,
    pub attributes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub timesteps: usize,
    pub channels: usize,
    pub windows: usize,
    pub has_labels: bool,
    pub attributes: Vec<AttributeSchema>,
    /// Split tag per window, in window order.
    pub split: Option<Vec<Split>>,
    pub checksums: Checksums,
    /// Free-form description of where the data came from (e.g. the synthesis spec).
    #[serde(default)]
    pub source: serde_json::Value,
}

impl DatasetManifest {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.timesteps, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub ids: Vec<u64>,
    windows: Vec<f32>,
    labels: Option<Vec<u8>>,
    /// `attribute_values[a][i]`: segment of window `i` for attribute `a`.
    attribute_values: Vec<Vec<String>>,
}

/// Resolves a relative dataset path against `$FAIRSSL_DATA_ROOT` when set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

impl Dataset {
    /// Assembles and validates a dataset. Attribute values outside the
    /// schema's vocabulary (other than [`UNKNOWN`]) are rejected.
    pub fn new(
        geometry: Geometry,
        ids: Vec<u64>,
        windows: Vec<f32>,
        labels: Option<Vec<u8>>,
        attributes: Vec<AttributeSchema>,
        attribute_values: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = ids.len();
        if geometry.timesteps == 0 || geometry.channels == 0 {
            return Err(Error::Format("window geometry must be nonzero".into()));
        }
        if windows.len() != n * geometry.timesteps * geometry.channels {
            return Err(Error::Format(format!(
                "{} window values for {n} windows of {}x{}",
                windows.len(),
                geometry.timesteps,
                geometry.channels
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Format(format!("duplicate window id {dup}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Format(format!("{} labels for {n} windows", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&v| v > 1) {
                return Err(Error::Data(format!("label {bad} is not 0 or 1")));
            }
        }
        if attribute_values.len() != attributes.len() {
            return Err(Error::Format("one value column per schema attribute required".into()));
        }
        for (schema, values) in attributes.iter().zip(&attribute_values) {
            if values.len() != n {
                return Err(Error::Format(format!("attribute {} has {} values for {n} windows", schema.name, values.len())));
            }
            if let Some(v) = values.iter().find(|v| *v != UNKNOWN && !schema.segments.contains(v)) {
                return Err(Error::Data(format!("attribute {}: segment {v:?} is not in the schema", schema.name)));
            }
            if let Some(p) = &schema.privileged {
                if !schema.segments.contains(p) {
                    return Err(Error::Config(format!(
                        "attribute {}: privileged segment {p:?} is not one of its segments",
                        schema.name
                    )));
                }
            }
        }
        Ok(Dataset {
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                timesteps: geometry.timesteps,
                channels: geometry.channels,
                windows: n,
                has_labels: labels.is_some(),
                attributes,
                split: None,
                checksums: Checksums::default(),
                source: serde_json::Value::Null,
            },
            ids,
            windows,
            labels,
            attribute_values,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn geometry(&self) -> Geometry {
        self.manifest.geometry()
    }

    fn window_len(&self) -> usize {
        self.manifest.timesteps * self.manifest.channels
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let w = self.window_len();
        &self.windows[i * w..(i + 1) * w]
    }

    pub fn window_tensor<F: Scalar>(&self, i: usize) -> Tensor<F> {
        let g = self.geometry();
        Tensor::from_fn(&[g.timesteps, g.channels], |j| F::of(f64::from(self.window(i)[j])))
    }

    /// `[indices.len(), T, C]` batch.
    pub fn batch<F: Scalar>(&self, indices: &[usize]) -> Tensor<F> {
        let g = self.geometry();
        let w = self.window_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend(self.window(i).iter().map(|&v| F::of(f64::from(v))));
        }
        Tensor::new(vec![indices.len(), g.timesteps, g.channels], data).expect("batch shape")
    }

    pub fn raw_windows(&self) -> &[f32] {
        &self.windows
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u8]> {
        self.labels()
            .ok_or_else(|| Error::Data("this workflow needs labels but the dataset has none".into()))
    }

    pub fn attributes(&self) -> &[AttributeSchema] {
        &self.manifest.attributes
    }

    pub fn attribute_values(&self, name: &str) -> Result<&[String]> {
        self.manifest
            .attributes
            .iter()
            .position(|a| a.name == name)
            .map(|i| self.attribute_values[i].as_slice())
            .ok_or_else(|| Error::Config(format!("dataset has no attribute {name:?}")))
    }

    pub fn all_attribute_values(&self) -> &[Vec<String>] {
        &self.attribute_values
    }

    pub fn set_split(&mut self, split: Vec<Split>) -> Result<()> {
        if split.len() != self.len() {
            return Err(Error::Format(format!("{} split tags for {} windows", split.len(), self.len())));
        }
        self.manifest.split = Some(split);
        Ok(())
    }

    /// Window indices in `split`, in window order.
    pub fn indices(&self, split: Split) -> Result<Vec<usize>> {
        let tags = self
            .manifest
            .split
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no split assignment".into()))?;
        Ok(tags
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect())
    }

    /// A new dataset holding `indices` in the given order. Split tags follow
    /// the selected windows.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut windows = Vec::with_capacity(indices.len() * self.window_len());
        for &i in indices {
            windows.extend_from_slice(self.window(i));
        }
        let mut out = Dataset::new(
            self.geometry(),
            indices.iter().map(|&i| self.ids[i]).collect(),
            windows,
            self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            self.manifest.attributes.clone(),
            self.attribute_values
                .iter()
                .map(|col| indices.iter().map(|&i| col[i].clone()).collect())
                .collect(),
        )?;
        out.manifest.source = self.manifest.source.clone();
        if let Some(tags) = &self.manifest.split {
            out.manifest.split = Some(indices.iter().map(|&i| tags[i]).collect());
        }
        Ok(out)
    }

    fn labels_csv(&self) -> Result<Option<Vec<u8>>> {
        let Some(labels) = &self.labels else { return Ok(None) };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["window_id", "label"])?;
        for (id, l) in self.ids.iter().zip(labels) {
            w.write_record([id.to_string(), l.to_string()])?;
        }
        Ok(Some(w.into_inner().map_err(|e| Error::Internal(e.to_string()))?))
    }

    fn attributes_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["window_id".to_string()];
        header.extend(self.manifest.attributes.iter().map(|a| a.name.clone()));
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(self.attribute_values.iter().map(|col| col[i].clone()));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Internal(e.to_string()))
    }

    /// Writes the four dataset files into `dir`, refreshing checksums.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let blob = f32_bytes(self.windows.iter().copied());
        let labels = self.labels_csv()?;
        let attrs = self.attributes_csv()?;
        self.manifest.checksums = Checksums {
            windows: sha256_hex(&blob),
            labels: labels.as_deref().map(sha256_hex),
            attributes: sha256_hex(&attrs),
        };
        fs::write(dir.join(WINDOWS_FILE), &blob)?;
        match &labels {
            Some(l) => fs::write(dir.join(LABELS_FILE), l)?,
            None => {
                let _ = fs::remove_file(dir.join(LABELS_FILE));
            }
        }
        fs::write(dir.join(ATTRIBUTES_FILE), &attrs)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let dir = resolve_data_path(dir);
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path).map_err(|e| {
            Error::Data(format!("cannot read {}: {e}", manifest_path.display()))
        })?)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format version {}, this build reads {DATASET_FORMAT_VERSION}",
                manifest.format_version
            )));
        }

        let verify = |file: &str, bytes: &[u8], want: &str| -> Result<()> {
            if sha256_hex(bytes) != want {
                return Err(Error::CorruptData(format!("{file}: checksum mismatch")));
            }
            Ok(())
        };
        let blob = fs::read(dir.join(WINDOWS_FILE))?;
        verify(WINDOWS_FILE, &blob, &manifest.checksums.windows)?;
        let windows = read_f32s(&blob)?;

        let labels = match (&manifest.checksums.labels, manifest.has_labels) {
            (Some(sum), true) => {
                let bytes = fs::read(dir.join(LABELS_FILE))?;
                verify(LABELS_FILE, &bytes, sum)?;
                Some(csvio::parse_labels(&bytes)?)
            }
            (None, false) => None,
            _ => return Err(Error::Format("manifest label flag and checksum disagree".into())),
        };

        let attr_bytes = fs::read(dir.join(ATTRIBUTES_FILE))?;
        verify(ATTRIBUTES_FILE, &attr_bytes, &manifest.checksums.attributes)?;
        let names: Vec<&str> = manifest.attributes.iter().map(|a| a.name.as_str()).collect();
        let (ids, values) = csvio::parse_attributes(&attr_bytes, &names)?;

        if let Some((label_ids, _)) = &labels {
            if *label_ids != ids {
                return Err(Error::Format("labels.csv and attributes.csv list different window ids".into()));
            }
        }
        if ids.len() != manifest.windows {
            return Err(Error::Format(format!(
                "manifest declares {} windows, files hold {}",
                manifest.windows,
                ids.len()
            )));
        }
        let mut ds = Dataset::new(
            manifest.geometry(),
            ids,
            windows,
            labels.map(|(_, l)| l),
            manifest.attributes.clone(),
            values,
        )?;
        if let Some(split) = &manifest.split {
            ds.set_split(split.clone())?;
        }
        ds.manifest.checksums = manifest.checksums;
        ds.manifest.source = manifest.source;
        Ok(ds)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn toy(n: usize) -> Dataset {
        let g = Geometry::new(3, 2);
        let windows: Vec<f32> = (0..n * 6).map(|i| (i as f32 * 0.37).sin()).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let schema = vec![AttributeSchema {
            name: "group".into(),
            segments: vec!["A".into(), "B".into()],
            privileged: Some("A".into()),
        }];
        let values = vec![(0..n)
            .map(|i| match i % 3 {
                0 => "A".to_string(),
                1 => "B".to_string(),
                _ => UNKNOWN.to_string(),
            })
            .collect()];
        Dataset::new(g, (0..n as u64).map(|i| 100 + i).collect(), windows, Some(labels), schema, values).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(7);
        ds.set_split(vec![Split::Train, Split::Train, Split::Val, Split::Test, Split::Train, Split::Test, Split::Val])
            .unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let bits = |d: &Dataset| d.raw_windows().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        assert_eq!(back.indices(Split::Val).unwrap(), vec![2, 6]);
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(4);
        ds.save(dir.path()).unwrap();
        let path = dir.path().join(WINDOWS_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::CorruptData(_))));
    }

    #[test]
    fn geometry_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(4);
        ds.save(dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let mut m: DatasetManifest = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
        m.timesteps = 4;
        fs::write(&mpath, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_values_outside_schema() {
        let g = Geometry::new(1, 1);
        let schema = vec![AttributeSchema {
            name: "g".into(),
            segments: vec!["A".into()],
            privileged: None,
        }];
        let err = Dataset::new(g, vec![0], vec![0.0], None, schema, vec![vec!["Z".into()]]).unwrap_err();
        assert!(err.to_string().contains("\"Z\""));
    }

    #[test]
    fn subset_keeps_alignment() {
        let ds = toy(6);
        let sub = ds.subset(&[4, 1]).unwrap();
        assert_eq!(sub.ids, vec![104, 101]);
        assert_eq!(sub.window(0), ds.window(4));
        assert_eq!(sub.labels().unwrap(), &[0, 1]);
        assert_eq!(sub.attribute_values("group").unwrap(), &["B".to_string(), "B".to_string()]);
    }
}
