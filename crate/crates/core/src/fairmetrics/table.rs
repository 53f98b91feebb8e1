use std::path::Path;

use super::ConfusionCounts;
use crate::error::{Error, Result};

/// Per-window scores of one model: `P(class 1)`, the true label and the
/// segment of each attribute. CSV columns are
/// `window_id,score,label,<attribute>...`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub model: String,
    pub window_ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub attribute_names: Vec<String>,
    /// `attributes[a][i]`.
    pub attributes: Vec<Vec<String>>,
}

impl PredictionTable {
    pub fn new(
        model: impl Into<String>,
        window_ids: Vec<u64>,
        scores: Vec<f64>,
        labels: Vec<u8>,
        attribute_names: Vec<String>,
        attributes: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = window_ids.len();
        if scores.len() != n || labels.len() != n {
            return Err(Error::Format(format!(
                "prediction table: {n} ids, {} scores, {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if attribute_names.len() != attributes.len() || attributes.iter().any(|c| c.len() != n) {
            return Err(Error::Format("prediction table: attribute columns misaligned".into()));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Data(format!("prediction score {s} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {l} is not 0 or 1")));
        }
        Ok(PredictionTable {
            model: model.into(),
            window_ids,
            scores,
            labels,
            attribute_names,
            attributes,
        })
    }

    pub fn len(&self) -> usize {
        self.window_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_ids.is_empty()
    }

    pub fn attribute(&self, name: &str) -> Result<&[String]> {
        self.attribute_names
            .iter()
            .position(|a| a == name)
            .map(|i| self.attributes[i].as_slice())
            .ok_or_else(|| Error::Config(format!("predictions carry no attribute {name:?}")))
    }

    /// Rows whose `attribute` equals `segment`.
    pub fn segment_indices(&self, attribute: &str, segment: &str) -> Result<Vec<usize>> {
        Ok(self
            .attribute(attribute)?
            .iter()
            .enumerate()
            .filter(|(_, v)| *v == segment)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn select(&self, indices: &[usize]) -> (Vec<f64>, Vec<u8>) {
        (
            indices.iter().map(|&i| self.scores[i]).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn confusion(&self, indices: &[usize], threshold: f64) -> ConfusionCounts {
        let (s, l) = self.select(indices);
        ConfusionCounts::from_scores(&s, &l, threshold)
    }

    /// True when both tables score the same windows with the same labels and
    /// attributes, in the same order.
    pub fn aligned_with(&self, other: &PredictionTable) -> bool {
        self.window_ids == other.window_ids
            && self.labels == other.labels
            && self.attribute_names == other.attribute_names
            && self.attributes == other.attributes
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["window_id".to_string(), "score".into(), "label".into()];
        header.extend(self.attribute_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.window_ids[i].to_string(), self.scores[i].to_string(), self.labels[i].to_string()];
            row.extend(self.attributes.iter().map(|c| c[i].clone()));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_csv(model: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "window_id" || &header[1] != "score" || &header[2] != "label" {
            return Err(Error::Format("predictions header must start with window_id,score,label".into()));
        }
        let attribute_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        let mut attributes = vec![Vec::new(); attribute_names.len()];
        let num = |s: &str, what: &str| Error::Format(format!("predictions: {what} {s:?} is not a number"));
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec[0].parse().map_err(|_| num(&rec[0], "window_id"))?);
            scores.push(rec[1].parse().map_err(|_| num(&rec[1], "score"))?);
            labels.push(rec[2].parse().map_err(|_| num(&rec[2], "label"))?);
            for (a, col) in attributes.iter_mut().enumerate() {
                col.push(rec.get(a + 3).unwrap_or("").to_string());
            }
        }
        PredictionTable::new(model, ids, scores, labels, attribute_names, attributes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Loads a table; the model id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let model = path
            .file_stem()
            .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
        Self::from_csv(model, &std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = PredictionTable::new(
            "m",
            vec![3, 1],
            vec![0.123456789012345, 1.0],
            vec![1, 0],
            vec!["g".into()],
            vec![vec!["A".into(), "unknown".into()]],
        )
        .unwrap();
        let back = PredictionTable::from_csv("m", &t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_out_of_range_scores() {
        let err = PredictionTable::new("m", vec![0], vec![1.5], vec![0], vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
