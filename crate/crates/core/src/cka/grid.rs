use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ActivationDump, Centered};
use crate::dataio::UNKNOWN;
use crate::error::{Error, Result};
use crate::plot;
use crate::rng::{SeedTree, SUBSET};

/// Which windows a grid is computed over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    All,
    Segment { attribute: String, segment: String },
    /// A subset drawing equally many windows from every known segment.
    Random { attribute: String },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::All => "all".into(),
            Condition::Segment { attribute, segment } => format!("{attribute}={segment}"),
            Condition::Random { attribute } => format!("{attribute}=random"),
        }
    }
}

/// CKA between every layer of model `a` (rows) and every layer of model `b`
/// (columns). `values` is row-major and unclamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGrid {
    pub model_a: String,
    pub model_b: String,
    pub condition: Condition,
    pub n: usize,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<f64>,
}

impl SimilarityGrid {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    fn clamped(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    /// Matrix layout: a `layer` column of row names, then one column per
    /// layer of model `b`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for c in &self.cols {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(r);
            for v in &self.clamped()[i * self.cols.len()..(i + 1) * self.cols.len()] {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`SimilarityGrid::to_csv`] output into row names, column names
    /// and row-major values.
    pub fn parse_csv(bytes: &[u8]) -> Result<(Vec<String>, Vec<String>, Vec<f64>)> {
        let mut reader = csv::Reader::from_reader(bytes);
        let header = reader.headers()?.clone();
        if header.get(0) != Some("layer") {
            return Err(Error::Format("similarity grid CSV must start with a layer column".into()));
        }
        let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let (mut rows, mut values) = (Vec::new(), Vec::new());
        for record in reader.records() {
            let record = record?;
            rows.push(record[0].to_string());
            for cell in record.iter().skip(1) {
                values.push(
                    cell.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad similarity value {cell:?}")))?,
                );
            }
        }
        Ok((rows, cols, values))
    }

    pub fn to_svg(&self) -> String {
        let title = format!("CKA {} vs {} ({}, n={})", self.model_a, self.model_b, self.condition.label(), self.n);
        plot::heatmap(&title, &self.rows, &self.cols, &self.clamped(), &self.model_b, &self.model_a)
    }
}

/// Grid over every window of the two dumps.
pub fn similarity_grid(a: &ActivationDump, b: &ActivationDump) -> Result<SimilarityGrid> {
    let rows: Vec<usize> = (0..a.len()).collect();
    compute(a, b, Condition::All, &rows)
}

/// Grid over the windows selected by `condition`. A segment with fewer than
/// `min_n` windows is an insufficient sample. In random mode every known
/// segment contributes `⌊smallest segment / #segments⌋` windows, so the
/// subset is about as large as one segment-conditioned grid.
pub fn conditioned_grid(
    a: &ActivationDump,
    b: &ActivationDump,
    condition: &Condition,
    min_n: usize,
    seed: u64,
) -> Result<SimilarityGrid> {
    let insufficient = |segment: &str, count: usize| Error::InsufficientSample {
        segment: segment.to_string(),
        count,
        required: min_n,
    };
    let rows: Vec<usize> = match condition {
        Condition::All => {
            if a.len() < min_n {
                return Err(insufficient("all", a.len()));
            }
            (0..a.len()).collect()
        }
        Condition::Segment { attribute, segment } => {
            let values = a.attribute(attribute)?;
            let rows: Vec<usize> = (0..a.len()).filter(|&i| values[i] == *segment).collect();
            if rows.len() < min_n {
                return Err(insufficient(&format!("{attribute}={segment}"), rows.len()));
            }
            rows
        }
        Condition::Random { attribute } => {
            let values = a.attribute(attribute)?;
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, v) in values.iter().enumerate() {
                if v != UNKNOWN {
                    groups.entry(v.as_str()).or_default().push(i);
                }
            }
            if groups.len() < 2 {
                return Err(Error::Data(format!(
                    "balanced subset needs at least 2 known segments of {attribute}, found {}",
                    groups.len()
                )));
            }
            let (smallest, count) = groups
                .iter()
                .map(|(s, g)| (*s, g.len()))
                .min_by_key(|&(_, c)| c)
                .expect("non-empty");
            if count < min_n {
                return Err(insufficient(&format!("{attribute}={smallest}"), count));
            }
            let per = count / groups.len();
            let seeds = SeedTree::new(seed);
            let mut rows = Vec::with_capacity(per * groups.len());
            for (k, members) in groups.values_mut().enumerate() {
                members.shuffle(&mut seeds.stream(SUBSET, &[k as u64]));
                rows.extend_from_slice(&members[..per]);
            }
            rows.sort_unstable();
            rows
        }
    };
    compute(a, b, condition.clone(), &rows)
}

fn compute(a: &ActivationDump, b: &ActivationDump, condition: Condition, rows: &[usize]) -> Result<SimilarityGrid> {
    if a.window_ids != b.window_ids {
        return Err(Error::Data(format!(
            "activation dumps of {} and {} cover different windows",
            a.model, b.model
        )));
    }
    if a.layers.is_empty() || b.layers.is_empty() {
        return Err(Error::Data("activation dump has no layers".into()));
    }
    let prepare = |d: &ActivationDump| -> Result<Vec<Centered>> {
        (0..d.layers.len()).map(|l| Centered::new(&d.matrix(l, rows))).collect()
    };
    let (ca, cb) = (prepare(a)?, prepare(b)?);
    let mut values = Vec::with_capacity(ca.len() * cb.len());
    for x in &ca {
        for y in &cb {
            values.push(x.cka(y)?);
        }
    }
    Ok(SimilarityGrid {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        condition,
        n: rows.len(),
        rows: a.layer_names(),
        cols: b.layer_names(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cka::tests::randn;
    use crate::cka::LayerActivations;

    fn dump(n: usize, seed: u64) -> ActivationDump {
        let layers = [("conv1", 4), ("conv2", 3), ("pool", 2)]
            .iter()
            .enumerate()
            .map(|(k, &(name, dim))| LayerActivations {
                name: name.into(),
                dim,
                data: randn(n, dim, seed * 10 + k as u64).data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        let g = (0..n).map(|i| if i % 3 == 0 { "B".to_string() } else { "A".to_string() }).collect();
        ActivationDump::new("m", (0..n as u64).collect(), vec!["g".into()], vec![g], layers).unwrap()
    }

    #[test]
    fn self_grid_has_unit_diagonal() {
        let d = dump(90, 1);
        for cond in [
            Condition::All,
            Condition::Segment { attribute: "g".into(), segment: "B".into() },
            Condition::Random { attribute: "g".into() },
        ] {
            let grid = conditioned_grid(&d, &d, &cond, 20, 0).unwrap();
            for i in 0..3 {
                assert!((grid.get(i, i) - 1.0).abs() < 1e-6, "{cond:?}");
            }
        }
    }

    #[test]
    fn random_subset_is_balanced() {
        let d = dump(90, 1);
        let grid = conditioned_grid(&d, &d, &Condition::Random { attribute: "g".into() }, 20, 3).unwrap();
        // smallest segment B has 30 windows, split over 2 segments
        assert_eq!(grid.n, 30);
    }

    #[test]
    fn small_segment_names_its_count() {
        let d = dump(60, 2);
        let cond = Condition::Segment { attribute: "g".into(), segment: "B".into() };
        let err = conditioned_grid(&d, &d, &cond, 50, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientSample { count: 20, required: 50, .. }), "{err}");
    }

    #[test]
    fn csv_round_trips() {
        let (a, b) = (dump(40, 3), dump(40, 4));
        let grid = similarity_grid(&a, &b).unwrap();
        let (rows, cols, values) = SimilarityGrid::parse_csv(grid.to_csv().as_bytes()).unwrap();
        assert_eq!(rows, grid.rows);
        assert_eq!(cols, grid.cols);
        assert_eq!(values, grid.clamped());
    }

    #[test]
    fn misaligned_dumps_are_rejected() {
        let a = dump(30, 1);
        let mut b = dump(30, 1);
        b.window_ids[0] = 999;
        assert!(matches!(similarity_grid(&a, &b), Err(Error::Data(_))));
    }
}
