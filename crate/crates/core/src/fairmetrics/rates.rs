use serde::{Deserialize, Serialize};

use super::ConfusionCounts;
use crate::error::{Error, Result};

/// `(FP + FN) / (P + N)`.
pub fn error_rate(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::UndefinedMetric("error rate of an empty segment".into()));
    }
    Ok(c.errors() as f64 / c.total() as f64)
}

/// Value of `ER_unprivileged / ER_privileged`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "lowercase")]
pub enum ErrRatio {
    Finite(f64),
    /// The privileged segment made no errors but the unprivileged one did.
    Infinite,
    /// Neither segment made an error.
    Indeterminate,
}

impl ErrRatio {
    pub fn finite(self) -> Option<f64> {
        match self {
            ErrRatio::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// `inf` and `NaN` for the sentinels, for plotting and CSV cells.
    pub fn as_f64(self) -> f64 {
        match self {
            ErrRatio::Finite(v) => v,
            ErrRatio::Infinite => f64::INFINITY,
            ErrRatio::Indeterminate => f64::NAN,
        }
    }
}

impl std::fmt::Display for ErrRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrRatio::Finite(v) => write!(f, "{v}"),
            ErrRatio::Infinite => f.write_str("inf"),
            ErrRatio::Indeterminate => f.write_str("n/a"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateRatio {
    pub unprivileged_er: f64,
    pub privileged_er: f64,
    pub ratio: ErrRatio,
    /// `0.8 <= ratio <= 1.25`, decided on the exact rational value.
    pub fair: bool,
}

pub const FAIR_LOW: f64 = 0.8;
pub const FAIR_HIGH: f64 = 1.25;

pub fn error_rate_ratio(unprivileged: &ConfusionCounts, privileged: &ConfusionCounts) -> Result<ErrorRateRatio> {
    let er_u = error_rate(unprivileged)?;
    let er_p = error_rate(privileged)?;
    let (ratio, fair) = exact_ratio(unprivileged.errors(), unprivileged.total(), privileged.errors(), privileged.total());
    Ok(ErrorRateRatio {
        unprivileged_er: er_u,
        privileged_er: er_p,
        ratio,
        fair,
    })
}

/// Ratio of `e_u / n_u` to `e_p / n_p` (both `n` nonzero) and its fair flag.
pub(super) fn exact_ratio(e_u: u64, n_u: u64, e_p: u64, n_p: u64) -> (ErrRatio, bool) {
    // ratio = a / b exactly, with a = e_u · n_p and b = n_u · e_p.
    let a = u128::from(e_u) * u128::from(n_p);
    let b = u128::from(n_u) * u128::from(e_p);
    match (a, b) {
        (0, 0) => (ErrRatio::Indeterminate, false),
        (_, 0) => (ErrRatio::Infinite, false),
        // 0.8 <= a/b <= 1.25  <=>  4b <= 5a and 4a <= 5b
        (a, b) => (ErrRatio::Finite(a as f64 / b as f64), 4 * b <= 5 * a && 4 * a <= 5 * b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub attribute: String,
    pub segment: String,
    pub ratio: ErrRatio,
    /// `|ERR − 1|`; `None` unless the ratio is finite.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityDeviation {
    /// Unweighted mean of `|ERR − 1|` over pairs with a finite ratio.
    pub mean: f64,
    pub pairs: Vec<PairDeviation>,
}

impl ParityDeviation {
    pub fn used(&self) -> usize {
        self.pairs.iter().filter(|p| p.deviation.is_some()).count()
    }
}

/// Aggregates `(attribute, unprivileged segment, ERR)` triples.
pub fn parity_deviation(ratios: &[(String, String, ErrRatio)]) -> Result<ParityDeviation> {
    let pairs: Vec<PairDeviation> = ratios
        .iter()
        .map(|(a, s, r)| PairDeviation {
            attribute: a.clone(),
            segment: s.clone(),
            ratio: *r,
            deviation: r.finite().map(|v| (v - 1.0).abs()),
        })
        .collect();
    let devs: Vec<f64> = pairs.iter().filter_map(|p| p.deviation).collect();
    if devs.is_empty() {
        return Err(Error::UndefinedMetric("parity deviation needs at least one finite error-rate ratio".into()));
    }
    Ok(ParityDeviation {
        mean: devs.iter().sum::<f64>() / devs.len() as f64,
        pairs,
    })
}
