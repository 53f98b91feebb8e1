//! Discrimination and fairness metrics over prediction tables.

mod auc;
mod bootstrap;
mod rates;
mod report;
mod table;

use serde::{Deserialize, Serialize};

use crate::dataio::{AttributeSchema, UNKNOWN};
use crate::error::{Error, Result};

pub use auc::{auc_roc, roc_curve, RocPoint};
pub use bootstrap::{bootstrap_ci, compare_models, resample_indices, BootstrapConfig, MetricEstimate, ModelComparison};
pub use rates::{
    error_rate, error_rate_ratio, parity_deviation, ErrRatio, ErrorRateRatio, PairDeviation, ParityDeviation, FAIR_HIGH,
    FAIR_LOW,
};
pub use report::{
    fairness_report, parity_csv, segment_table, segment_table_csv, FairnessReport, ReportConfig, SegmentReport,
    SegmentStatus, TableRow,
};
pub use table::PredictionTable;

/// Class-1 probability at or above which a window is predicted positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// An attribute with its segment vocabulary and the reference segment that
/// error-rate ratios are taken against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedAttribute {
    pub name: String,
    pub segments: Vec<String>,
    pub privileged: String,
}

impl ProtectedAttribute {
    pub fn new(name: impl Into<String>, segments: Vec<String>, privileged: impl Into<String>) -> Result<Self> {
        let attr = ProtectedAttribute {
            name: name.into(),
            segments,
            privileged: privileged.into(),
        };
        if attr.segments.len() < 2 {
            return Err(Error::Config(format!("attribute {} needs at least 2 segments", attr.name)));
        }
        if !attr.segments.contains(&attr.privileged) {
            return Err(Error::Config(format!(
                "attribute {}: privileged segment {:?} is not one of {:?}",
                attr.name, attr.privileged, attr.segments
            )));
        }
        Ok(attr)
    }

    /// Uses `privileged` when given, else the schema's own designation.
    pub fn from_schema(schema: &AttributeSchema, privileged: Option<&str>) -> Result<Self> {
        let p = privileged
            .map(str::to_string)
            .or_else(|| schema.privileged.clone())
            .ok_or_else(|| Error::Config(format!("no privileged segment designated for attribute {}", schema.name)))?;
        ProtectedAttribute::new(schema.name.clone(), schema.segments.clone(), p)
    }

    pub fn unprivileged(&self) -> impl Iterator<Item = &str> {
        self.segments
            .iter()
            .map(String::as_str)
            .filter(move |s| *s != self.privileged && *s != UNKNOWN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Tallies hard decisions `score >= threshold` against `labels`.
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for (&s, &l) in scores.iter().zip(labels) {
            c.add(s >= threshold, l == 1);
        }
        c
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn errors(&self) -> u64 {
        self.fp + self.fn_
    }
}
