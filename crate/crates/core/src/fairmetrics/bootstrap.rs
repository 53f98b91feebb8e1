use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rates::exact_ratio;
use super::{PredictionTable, ProtectedAttribute};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, BOOTSTRAP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::Config(format!("bootstrap needs at least 100 replicates, got {}", self.replicates)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level must be in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub replicates: usize,
}

/// `n` draws with replacement from `0..n`.
pub fn resample_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Linear interpolation between order statistics (the common "type 7" rule).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Draws resamples until `replicates` succeed. `eval` returns `None` for a
/// resample that must be redrawn; once more than half of at least
/// `replicates` attempts failed the interval is declared unavailable.
fn replicate(
    n: usize,
    cfg: &BootstrapConfig,
    purpose: &str,
    mut eval: impl FnMut(&[usize]) -> Result<Option<f64>>,
) -> Result<Vec<f64>> {
    let seeds = SeedTree::new(cfg.seed);
    let mut values = Vec::with_capacity(cfg.replicates);
    let (mut attempted, mut failed) = (0usize, 0usize);
    while values.len() < cfg.replicates {
        let idx = resample_indices(n, &mut seeds.stream(purpose, &[attempted as u64]));
        attempted += 1;
        match eval(&idx)? {
            Some(v) => values.push(v),
            None => failed += 1,
        }
        if attempted >= cfg.replicates && 2 * failed > attempted {
            return Err(Error::CiUnavailable { failed, attempted });
        }
    }
    Ok(values)
}

/// Percentile bootstrap interval of `metric` over window-level resamples.
/// Resamples missing a class are redrawn. The interval is widened, if
/// needed, to contain the full-sample point estimate.
pub fn bootstrap_ci<M>(scores: &[f64], labels: &[u8], metric: M, cfg: &BootstrapConfig) -> Result<MetricEstimate>
where
    M: Fn(&[f64], &[u8]) -> Result<f64>,
{
    cfg.validate()?;
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (mut s, mut l) = (Vec::with_capacity(scores.len()), Vec::with_capacity(scores.len()));
    let mut values = replicate(scores.len(), cfg, BOOTSTRAP, |idx| {
        s.clear();
        l.clear();
        s.extend(idx.iter().map(|&i| scores[i]));
        l.extend(idx.iter().map(|&i| labels[i]));
        let pos = l.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == l.len() {
            return Ok(None);
        }
        metric(&s, &l).map(Some)
    })?;
    let point = metric(scores, labels)?;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.level) / 2.0;
    Ok(MetricEstimate {
        point,
        low: quantile(&values, alpha).min(point),
        high: quantile(&values, 1.0 - alpha).max(point),
        replicates: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub deviation_a: f64,
    pub deviation_b: f64,
    /// `deviation_a − deviation_b` on the full sample.
    pub difference: f64,
    /// Two-sided paired-bootstrap p-value for a zero difference.
    pub p_value: f64,
    pub replicates: usize,
}

/// Per-window error indicators and segment codes, so a resample's parity
/// deviation is a counting pass.
struct Encoded {
    errors_a: Vec<bool>,
    errors_b: Vec<bool>,
    /// `codes[a][i]`: segment index of window `i`, `usize::MAX` when the
    /// segment is unknown or outside the vocabulary.
    codes: Vec<Vec<usize>>,
    privileged: Vec<usize>,
    sizes: Vec<usize>,
}

impl Encoded {
    fn new(a: &PredictionTable, b: &PredictionTable, attrs: &[ProtectedAttribute], threshold: f64) -> Result<Self> {
        let wrong = |t: &PredictionTable| -> Vec<bool> {
            t.scores
                .iter()
                .zip(&t.labels)
                .map(|(&s, &l)| (s >= threshold) != (l == 1))
                .collect()
        };
        let mut codes = Vec::with_capacity(attrs.len());
        for attr in attrs {
            let values = a.attribute(&attr.name)?;
            codes.push(
                values
                    .iter()
                    .map(|v| attr.segments.iter().position(|s| s == v).unwrap_or(usize::MAX))
                    .collect(),
            );
        }
        Ok(Encoded {
            errors_a: wrong(a),
            errors_b: wrong(b),
            codes,
            privileged: attrs
                .iter()
                .map(|a| a.segments.iter().position(|s| *s == a.privileged).expect("validated"))
                .collect(),
            sizes: attrs.iter().map(|a| a.segments.len()).collect(),
        })
    }

    /// Parity deviations of both models over the windows `idx`; `None` if
    /// either has no finite error-rate ratio.
    fn deviations(&self, idx: &[usize]) -> Option<(f64, f64)> {
        let (mut sum_a, mut used_a, mut sum_b, mut used_b) = (0.0, 0usize, 0.0, 0usize);
        for (a, codes) in self.codes.iter().enumerate() {
            // [n, errors_a, errors_b] per segment
            let mut tally = vec![[0u64; 3]; self.sizes[a]];
            for &i in idx {
                let c = codes[i];
                if c != usize::MAX {
                    tally[c][0] += 1;
                    tally[c][1] += u64::from(self.errors_a[i]);
                    tally[c][2] += u64::from(self.errors_b[i]);
                }
            }
            let p = tally[self.privileged[a]];
            if p[0] == 0 {
                continue;
            }
            for (s, t) in tally.iter().enumerate() {
                if s == self.privileged[a] || t[0] == 0 {
                    continue;
                }
                if let Some(r) = exact_ratio(t[1], t[0], p[1], p[0]).0.finite() {
                    sum_a += (r - 1.0).abs();
                    used_a += 1;
                }
                if let Some(r) = exact_ratio(t[2], t[0], p[2], p[0]).0.finite() {
                    sum_b += (r - 1.0).abs();
                    used_b += 1;
                }
            }
        }
        (used_a > 0 && used_b > 0).then(|| (sum_a / used_a as f64, sum_b / used_b as f64))
    }
}

/// Paired bootstrap test of whether two models scored on the same windows
/// deviate equally from error-rate parity. Each replicate resamples windows,
/// recomputes both deviations and records their difference `d*`;
/// `p = min(1, 2 · min(#{d* ≤ 0}, #{d* ≥ 0}) / B)`.
pub fn compare_models(
    a: &PredictionTable,
    b: &PredictionTable,
    attributes: &[ProtectedAttribute],
    threshold: f64,
    cfg: &BootstrapConfig,
) -> Result<ModelComparison> {
    cfg.validate()?;
    if !a.aligned_with(b) {
        return Err(Error::Data("compare_models needs both models scored on the same windows".into()));
    }
    if a.is_empty() || attributes.is_empty() {
        return Err(Error::Data("compare_models needs windows and at least one attribute".into()));
    }
    let enc = Encoded::new(a, b, attributes, threshold)?;
    let all: Vec<usize> = (0..a.len()).collect();
    let (dev_a, dev_b) = enc.deviations(&all).ok_or_else(|| {
        Error::UndefinedMetric("parity deviation is undefined for at least one model on the full sample".into())
    })?;
    let diffs = replicate(a.len(), cfg, "compare", |idx| Ok(enc.deviations(idx).map(|(x, y)| x - y)))?;
    let le = diffs.iter().filter(|&&d| d <= 0.0).count();
    let ge = diffs.iter().filter(|&&d| d >= 0.0).count();
    Ok(ModelComparison {
        deviation_a: dev_a,
        deviation_b: dev_b,
        difference: dev_a - dev_b,
        p_value: (2.0 * le.min(ge) as f64 / diffs.len() as f64).min(1.0),
        replicates: diffs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairmetrics::auc_roc;

    fn noisy_set(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = SeedTree::new(seed).stream("t", &[]);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let scores = labels
            .iter()
            .map(|&l| (0.3 * f64::from(l) + 0.7 * rng.random::<f64>()).min(1.0))
            .collect();
        (scores, labels)
    }

    #[test]
    fn point_lies_inside_interval() {
        let (s, l) = noisy_set(80, 1);
        let est = bootstrap_ci(&s, &l, auc_roc, &BootstrapConfig::default()).unwrap();
        assert!(est.low <= est.point && est.point <= est.high);
        assert_eq!(est.replicates, 1000);
    }

    #[test]
    fn constant_labels_have_no_interval() {
        let err = bootstrap_ci(&[0.2, 0.4, 0.9], &[1, 1, 1], auc_roc, &BootstrapConfig::default()).unwrap_err();
        assert!(matches!(err, Error::CiUnavailable { .. }), "{err}");
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.625), 3.5);
        assert_eq!(quantile(&v, 1.0), 5.0);
    }

    #[test]
    fn seeded_replicates_repeat() {
        let (s, l) = noisy_set(60, 2);
        let cfg = BootstrapConfig { seed: 4, ..Default::default() };
        assert_eq!(bootstrap_ci(&s, &l, auc_roc, &cfg).unwrap(), bootstrap_ci(&s, &l, auc_roc, &cfg).unwrap());
    }

    #[test]
    fn self_comparison_has_p_one() {
        let (s, l) = noisy_set(200, 3);
        let g: Vec<String> = (0..200).map(|i| if i % 2 == 0 { "A".into() } else { "B".into() }).collect();
        let t = PredictionTable::new("m", (0..200).collect(), s, l, vec!["g".into()], vec![g]).unwrap();
        let attr = ProtectedAttribute::new("g", vec!["A".into(), "B".into()], "A").unwrap();
        let cmp = compare_models(&t, &t, &[attr], 0.5, &BootstrapConfig::default()).unwrap();
        assert_eq!(cmp.difference, 0.0);
        assert_eq!(cmp.p_value, 1.0);
    }
}
