use serde::{Deserialize, Serialize};

use super::{
    auc_roc, bootstrap_ci, error_rate, error_rate_ratio, parity_deviation, BootstrapConfig, ConfusionCounts,
    ErrorRateRatio, MetricEstimate, ParityDeviation, PredictionTable, ProtectedAttribute, DEFAULT_THRESHOLD,
};
use crate::dataio::UNKNOWN;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub threshold: f64,
    pub bootstrap: BootstrapConfig,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            threshold: DEFAULT_THRESHOLD,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub attribute: String,
    pub segment: String,
    pub privileged: bool,
    pub n: usize,
    pub positives: usize,
    /// `None` when the segment lacks a class or its interval is unavailable.
    pub auc: Option<MetricEstimate>,
    /// Segment AUC minus general-population AUC.
    pub delta_gen_segm: Option<f64>,
    pub counts: ConfusionCounts,
    pub error_rate: Option<f64>,
    /// Against the privileged segment; `None` for the privileged segment
    /// itself, unknowns and empty segments.
    pub err: Option<ErrorRateRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub format_version: u32,
    pub model: String,
    pub threshold: f64,
    pub n: usize,
    pub general: MetricEstimate,
    pub general_error_rate: f64,
    pub segments: Vec<SegmentReport>,
    /// `None` when no attribute yields a finite error-rate ratio.
    pub parity: Option<ParityDeviation>,
}

fn segment_seed(root: u64, attribute: usize, segment: usize) -> u64 {
    SeedTree::new(root).key("segment", &[attribute as u64, segment as u64])
}

/// Evaluates `table` overall and per segment of every attribute. Segments
/// appear in vocabulary order, followed by an `unknown` row when present.
pub fn fairness_report(table: &PredictionTable, attributes: &[ProtectedAttribute], cfg: &ReportConfig) -> Result<FairnessReport> {
    let general = bootstrap_ci(&table.scores, &table.labels, auc_roc, &cfg.bootstrap)?;
    let all: Vec<usize> = (0..table.len()).collect();
    let general_error_rate = error_rate(&table.confusion(&all, cfg.threshold))?;
    let mut segments = Vec::new();
    let mut ratios = Vec::new();
    for (ai, attr) in attributes.iter().enumerate() {
        let values = table.attribute(&attr.name)?;
        if let Some(v) = values.iter().find(|v| *v != UNKNOWN && !attr.segments.contains(v)) {
            return Err(Error::Data(format!("attribute {}: segment {v:?} is not in the configured vocabulary", attr.name)));
        }
        let privileged_idx = table.segment_indices(&attr.name, &attr.privileged)?;
        let privileged_counts = table.confusion(&privileged_idx, cfg.threshold);
        let mut names: Vec<&str> = attr.segments.iter().map(String::as_str).collect();
        if values.iter().any(|v| v == UNKNOWN) {
            names.push(UNKNOWN);
        }
        for (si, &seg) in names.iter().enumerate() {
            let idx = table.segment_indices(&attr.name, seg)?;
            let (s, l) = table.select(&idx);
            let positives = l.iter().filter(|&&v| v == 1).count();
            let auc = if positives == 0 || positives == idx.len() {
                None
            } else {
                let bcfg = BootstrapConfig {
                    seed: segment_seed(cfg.bootstrap.seed, ai, si),
                    ..cfg.bootstrap
                };
                match bootstrap_ci(&s, &l, auc_roc, &bcfg) {
                    Ok(e) => Some(e),
                    Err(Error::CiUnavailable { .. }) => None,
                    Err(e) => return Err(e),
                }
            };
            let counts = ConfusionCounts::from_scores(&s, &l, cfg.threshold);
            let is_privileged = seg == attr.privileged;
            let err = if is_privileged || seg == UNKNOWN || idx.is_empty() || privileged_idx.is_empty() {
                None
            } else {
                Some(error_rate_ratio(&counts, &privileged_counts)?)
            };
            if let Some(r) = &err {
                ratios.push((attr.name.clone(), seg.to_string(), r.ratio));
            }
            segments.push(SegmentReport {
                attribute: attr.name.clone(),
                segment: seg.to_string(),
                privileged: is_privileged,
                n: idx.len(),
                positives,
                delta_gen_segm: auc.map(|a| a.point - general.point),
                auc,
                counts,
                error_rate: error_rate(&counts).ok(),
                err,
            });
        }
    }
    let parity = match parity_deviation(&ratios) {
        Ok(p) => Some(p),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(FairnessReport {
        format_version: REPORT_FORMAT_VERSION,
        model: table.model.clone(),
        threshold: cfg.threshold,
        n: table.len(),
        general,
        general_error_rate,
        segments,
        parity,
    })
}

/// Fixed-precision cell; metrics are reported to six decimals.
pub(crate) fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        Some(v) if v.is_infinite() => "inf".into(),
        _ => "n/a".into(),
    }
}

impl FairnessReport {
    pub fn segment(&self, attribute: &str, segment: &str) -> Option<&SegmentReport> {
        self.segments
            .iter()
            .find(|s| s.attribute == attribute && s.segment == segment)
    }

    /// `fairness_report.csv`: a general-population row then one row per
    /// attribute segment.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "attribute",
            "segment",
            "privileged",
            "n",
            "positives",
            "auc",
            "auc_ci_low",
            "auc_ci_high",
            "delta_gen_segm",
            "tp",
            "fp",
            "tn",
            "fn",
            "error_rate",
            "err",
            "fair",
        ])?;
        w.write_record([
            self.model.clone(),
            "general".into(),
            "all".into(),
            String::new(),
            self.n.to_string(),
            String::new(),
            cell(Some(self.general.point)),
            cell(Some(self.general.low)),
            cell(Some(self.general.high)),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            cell(Some(self.general_error_rate)),
            String::new(),
            String::new(),
        ])?;
        for s in &self.segments {
            let c = &s.counts;
            w.write_record([
                self.model.clone(),
                s.attribute.clone(),
                s.segment.clone(),
                s.privileged.to_string(),
                s.n.to_string(),
                s.positives.to_string(),
                cell(s.auc.map(|a| a.point)),
                cell(s.auc.map(|a| a.low)),
                cell(s.auc.map(|a| a.high)),
                cell(s.delta_gen_segm),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
                cell(s.error_rate),
                s.err.map_or_else(String::new, |e| cell(Some(e.ratio.as_f64()))),
                s.err.map_or_else(String::new, |e| e.fair.to_string()),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Internal(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    Advantaged,
    Disadvantaged,
    Parity,
    MostAdvantaged,
    MostDisadvantaged,
    NotAvailable,
}

impl SegmentStatus {
    pub fn name(self) -> &'static str {
        match self {
            SegmentStatus::Advantaged => "advantaged",
            SegmentStatus::Disadvantaged => "disadvantaged",
            SegmentStatus::Parity => "parity",
            SegmentStatus::MostAdvantaged => "most_advantaged",
            SegmentStatus::MostDisadvantaged => "most_disadvantaged",
            SegmentStatus::NotAvailable => "n/a",
        }
    }
}

/// One row of the two-model segment comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub attribute: String,
    pub segment: String,
    pub n: usize,
    pub auc_a: Option<MetricEstimate>,
    pub delta_a: Option<f64>,
    pub status_a: SegmentStatus,
    pub auc_b: Option<MetricEstimate>,
    pub delta_b: Option<f64>,
    pub status_b: SegmentStatus,
    /// `|Δ_a| − |Δ_b|`: positive when model `b` sits closer to its general
    /// population on this segment.
    pub delta_model: Option<f64>,
}

fn statuses(deltas: &[Option<f64>]) -> Vec<SegmentStatus> {
    let finite = || deltas.iter().enumerate().filter_map(|(i, d)| d.map(|d| (i, d)));
    let top = finite().fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
        Some((_, b)) if b >= d => best,
        _ => Some((i, d)),
    });
    let bottom = finite().fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
        Some((_, b)) if b <= d => best,
        _ => Some((i, d)),
    });
    deltas
        .iter()
        .enumerate()
        .map(|(i, d)| match *d {
            None => SegmentStatus::NotAvailable,
            Some(d) if d > 0.0 && top.map(|t| t.0) == Some(i) => SegmentStatus::MostAdvantaged,
            Some(d) if d < 0.0 && bottom.map(|t| t.0) == Some(i) => SegmentStatus::MostDisadvantaged,
            Some(d) if d > 0.0 => SegmentStatus::Advantaged,
            Some(d) if d < 0.0 => SegmentStatus::Disadvantaged,
            Some(_) => SegmentStatus::Parity,
        })
        .collect()
}

/// Side-by-side per-segment AUC of two models scored on the same windows.
/// The first row is the general population (`attribute = "general"`).
/// Most advantaged/disadvantaged segments are flagged per model over the
/// whole table.
pub fn segment_table(a: &FairnessReport, b: &FairnessReport) -> Result<Vec<TableRow>> {
    let keys = |r: &FairnessReport| -> Vec<(String, String, usize)> {
        r.segments.iter().map(|s| (s.attribute.clone(), s.segment.clone(), s.n)).collect()
    };
    if keys(a) != keys(b) || a.n != b.n {
        return Err(Error::Data(format!(
            "reports for {} and {} cover different segments",
            a.model, b.model
        )));
    }
    let da: Vec<Option<f64>> = a.segments.iter().map(|s| s.delta_gen_segm).collect();
    let db: Vec<Option<f64>> = b.segments.iter().map(|s| s.delta_gen_segm).collect();
    let (sa, sb) = (statuses(&da), statuses(&db));
    let mut rows = vec![TableRow {
        attribute: "general".into(),
        segment: "all".into(),
        n: a.n,
        auc_a: Some(a.general),
        delta_a: None,
        status_a: SegmentStatus::NotAvailable,
        auc_b: Some(b.general),
        delta_b: None,
        status_b: SegmentStatus::NotAvailable,
        delta_model: None,
    }];
    for (i, (x, y)) in a.segments.iter().zip(&b.segments).enumerate() {
        rows.push(TableRow {
            attribute: x.attribute.clone(),
            segment: x.segment.clone(),
            n: x.n,
            auc_a: x.auc,
            delta_a: x.delta_gen_segm,
            status_a: sa[i],
            auc_b: y.auc,
            delta_b: y.delta_gen_segm,
            status_b: sb[i],
            delta_model: x.delta_gen_segm.zip(y.delta_gen_segm).map(|(p, q)| p.abs() - q.abs()),
        });
    }
    Ok(rows)
}

pub fn segment_table_csv(rows: &[TableRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "attribute",
        "segment",
        "n",
        "auc_a",
        "ci_low_a",
        "ci_high_a",
        "delta_gen_segm_a",
        "status_a",
        "auc_b",
        "ci_low_b",
        "ci_high_b",
        "delta_gen_segm_b",
        "status_b",
        "delta_model",
    ])?;
    for r in rows {
        w.write_record([
            r.attribute.clone(),
            r.segment.clone(),
            r.n.to_string(),
            cell(r.auc_a.map(|e| e.point)),
            cell(r.auc_a.map(|e| e.low)),
            cell(r.auc_a.map(|e| e.high)),
            cell(r.delta_a),
            r.status_a.name().into(),
            cell(r.auc_b.map(|e| e.point)),
            cell(r.auc_b.map(|e| e.low)),
            cell(r.auc_b.map(|e| e.high)),
            cell(r.delta_b),
            r.status_b.name().into(),
            cell(r.delta_model),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

/// `parity.csv`: one row per model.
pub fn parity_csv(reports: &[FairnessReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "parity_deviation", "pairs_used", "pairs_total", "worst_segment", "worst_err"])?;
    for r in reports {
        let (mean, used, total, worst) = match &r.parity {
            Some(p) => {
                let worst = p
                    .pairs
                    .iter()
                    .filter_map(|q| q.deviation.map(|d| (q, d)))
                    .fold(None, |best: Option<(&_, f64)>, (q, d)| match best {
                        Some((_, b)) if b >= d => best,
                        _ => Some((q, d)),
                    })
                    .map(|(q, _)| q);
                (Some(p.mean), p.used(), p.pairs.len(), worst)
            }
            None => (None, 0, 0, None),
        };
        w.write_record([
            r.model.clone(),
            cell(mean),
            used.to_string(),
            total.to_string(),
            worst.map_or_else(|| "n/a".into(), |q| format!("{}={}", q.attribute, q.segment)),
            cell(worst.map(|q| q.ratio.as_f64())),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(model: &str, shift: f64) -> PredictionTable {
        let n = 400;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let groups: Vec<String> = (0..n).map(|i| if (i / 2) % 2 == 0 { "A".into() } else { "B".into() }).collect();
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                let base = ((i * 37) % 101) as f64 / 101.0;
                let signal = if groups[i] == "A" { 0.4 } else { 0.1 + shift };
                (0.5 * base + f64::from(labels[i]) * signal).min(1.0)
            })
            .collect();
        PredictionTable::new(model, (0..n as u64).collect(), scores, labels, vec!["g".into()], vec![groups]).unwrap()
    }

    fn attr() -> ProtectedAttribute {
        ProtectedAttribute::new("g", vec!["A".into(), "B".into()], "A").unwrap()
    }

    #[test]
    fn identical_tables_have_zero_model_delta() {
        let r = fairness_report(&table("x", 0.0), &[attr()], &ReportConfig::default()).unwrap();
        let rows = segment_table(&r, &r).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows[1..] {
            assert_eq!(row.delta_model, Some(0.0));
        }
        assert!(rows[1].delta_a.unwrap() > 0.0);
        assert_eq!(rows[1].status_a, SegmentStatus::MostAdvantaged);
        assert_eq!(rows[2].status_a, SegmentStatus::MostDisadvantaged);
    }

    #[test]
    fn whole_population_segment_has_zero_delta() {
        let mut t = table("x", 0.0);
        t.attribute_names.push("all".into());
        t.attributes.push(vec!["everyone".into(); t.len()]);
        let everyone = ProtectedAttribute {
            name: "all".into(),
            segments: vec!["everyone".into()],
            privileged: "everyone".into(),
        };
        let r = fairness_report(&t, &[everyone], &ReportConfig::default()).unwrap();
        assert_eq!(r.segments[0].delta_gen_segm, Some(0.0));
    }

    #[test]
    fn weaker_group_scores_lower() {
        let r = fairness_report(&table("x", 0.0), &[attr()], &ReportConfig::default()).unwrap();
        let a = r.segment("g", "A").unwrap().auc.unwrap().point;
        let b = r.segment("g", "B").unwrap().auc.unwrap().point;
        assert!(b < a);
        assert!(r.segment("g", "B").unwrap().err.is_some());
        assert!(r.segment("g", "A").unwrap().err.is_none());
        let csv = String::from_utf8(r.to_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn model_delta_is_difference_of_magnitudes() {
        let ra = fairness_report(&table("a", 0.0), &[attr()], &ReportConfig::default()).unwrap();
        let rb = fairness_report(&table("b", 0.2), &[attr()], &ReportConfig::default()).unwrap();
        let rows = segment_table(&ra, &rb).unwrap();
        for row in &rows[1..] {
            let want = row.delta_a.unwrap().abs() - row.delta_b.unwrap().abs();
            assert_eq!(row.delta_model, Some(want));
        }
    }

    #[test]
    fn empty_segment_reported_as_na() {
        let t = table("x", 0.0);
        let wider = ProtectedAttribute::new("g", vec!["A".into(), "B".into(), "C".into()], "A").unwrap();
        let r = fairness_report(&t, &[wider], &ReportConfig::default()).unwrap();
        let c = r.segment("g", "C").unwrap();
        assert_eq!(c.n, 0);
        assert!(c.auc.is_none() && c.err.is_none());
        assert!(String::from_utf8(r.to_csv().unwrap()).unwrap().contains("n/a"));
    }
}
