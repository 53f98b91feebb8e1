use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AttributeSchema, Dataset, UNKNOWN};
use crate::error::{Error, Result};
use crate::models::Geometry;
use crate::rng::{SeedTree, SYNTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSegment {
    pub label: String,
    pub prevalence: f64,
    /// Multiplier on the class-1 burst amplitude for windows in this segment.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthAttribute {
    pub name: String,
    #[serde(default)]
    pub privileged: Option<String>,
    pub segments: Vec<SynthSegment>,
}

/// Shape of the class-1 signal: a Hann-windowed sinusoid of `length`
/// timesteps at a random onset, frequency and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstSpec {
    pub length: usize,
    /// Frequency range in cycles per timestep.
    pub min_freq: f64,
    pub max_freq: f64,
}

impl Default for BurstSpec {
    fn default() -> Self {
        BurstSpec {
            length: 16,
            min_freq: 0.1,
            max_freq: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub timesteps: usize,
    pub channels: usize,
    /// P(label = 1).
    pub class_prior: f64,
    pub noise_sigma: f64,
    /// Burst amplitude before segment multipliers.
    pub base_amplitude: f64,
    pub burst: BurstSpec,
    pub attributes: Vec<SynthAttribute>,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// 2000 windows of 48×8; attribute `group` with segment B's signal at half
    /// of A's, plus a signal-neutral `gender`.
    fn default() -> Self {
        let seg = |label: &str, amplitude: f64| SynthSegment {
            label: label.into(),
            prevalence: 0.5,
            amplitude,
        };
        SynthSpec {
            n: 2000,
            timesteps: 48,
            channels: 8,
            class_prior: 0.5,
            noise_sigma: 1.0,
            base_amplitude: 2.0,
            burst: BurstSpec::default(),
            attributes: vec![
                SynthAttribute {
                    name: "group".into(),
                    privileged: Some("A".into()),
                    segments: vec![seg("A", 1.0), seg("B", 0.5)],
                },
                SynthAttribute {
                    name: "gender".into(),
                    privileged: Some("male".into()),
                    segments: vec![seg("female", 1.0), seg("male", 1.0)],
                },
            ],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synth: {msg}")));
        if self.n == 0 || self.timesteps == 0 || self.channels == 0 {
            return bad("n, timesteps and channels must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.class_prior) {
            return bad(format!("class_prior {} outside [0, 1]", self.class_prior));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and non-negative", self.noise_sigma));
        }
        if !(self.base_amplitude >= 0.0 && self.base_amplitude.is_finite()) {
            return bad(format!("base_amplitude {} must be finite and non-negative", self.base_amplitude));
        }
        let b = &self.burst;
        if b.length < 2 || !(b.min_freq > 0.0 && b.min_freq <= b.max_freq && b.max_freq.is_finite()) {
            return bad("burst needs length >= 2 and 0 < min_freq <= max_freq".into());
        }
        for a in &self.attributes {
            if a.segments.is_empty() {
                return bad(format!("attribute {} has no segments", a.name));
            }
            let total: f64 = a.segments.iter().map(|s| s.prevalence).sum();
            if (total - 1.0).abs() > 1e-9 || a.segments.iter().any(|s| s.prevalence < 0.0) {
                return bad(format!("prevalences of {} must be non-negative and sum to 1, got {total}", a.name));
            }
            if let Some(s) = a.segments.iter().find(|s| !(s.amplitude >= 0.0 && s.amplitude.is_finite())) {
                return bad(format!("segment {}/{} amplitude {} must be non-negative", a.name, s.label, s.amplitude));
            }
            for (i, s) in a.segments.iter().enumerate() {
                if s.label == UNKNOWN || a.segments[..i].iter().any(|p| p.label == s.label) {
                    return bad(format!("attribute {}: segment label {:?} is reserved or repeated", a.name, s.label));
                }
            }
            if let Some(p) = &a.privileged {
                if !a.segments.iter().any(|s| &s.label == p) {
                    return bad(format!("attribute {}: privileged segment {p:?} is not defined", a.name));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Vec<AttributeSchema> {
        self.attributes
            .iter()
            .map(|a| AttributeSchema {
                name: a.name.clone(),
                segments: a.segments.iter().map(|s| s.label.clone()).collect(),
                privileged: a.privileged.clone(),
            })
            .collect()
    }
}

fn pick<R: Rng>(segments: &[SynthSegment], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, s) in segments.iter().enumerate() {
        acc += s.prevalence;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum: last segment with mass.
    segments.iter().rposition(|s| s.prevalence > 0.0).unwrap_or(0)
}

/// Generates the dataset described by `spec`. Each window draws from its own
/// stream, so window `i` depends only on `(spec, seed, i)`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (t_len, c_len) = (spec.timesteps, spec.channels);
    let burst_len = spec.burst.length.min(t_len);
    let hann: Vec<f64> = (0..burst_len)
        .map(|j| 0.5 * (1.0 - (2.0 * PI * j as f64 / (burst_len - 1).max(1) as f64).cos()))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let seeds = SeedTree::new(spec.seed);

    let mut windows = Vec::with_capacity(spec.n * t_len * c_len);
    let mut labels = Vec::with_capacity(spec.n);
    let mut values: Vec<Vec<String>> = vec![Vec::with_capacity(spec.n); spec.attributes.len()];
    for i in 0..spec.n {
        let mut rng = seeds.stream(SYNTH, &[i as u64]);
        let label = u8::from(rng.random_bool(spec.class_prior));
        let mut amplitude = spec.base_amplitude;
        for (a, col) in spec.attributes.iter().zip(values.iter_mut()) {
            let s = &a.segments[pick(&a.segments, &mut rng)];
            amplitude *= s.amplitude;
            col.push(s.label.clone());
        }
        let onset = rng.random_range(0..=t_len - burst_len);
        let freq = rng.random_range(spec.burst.min_freq..=spec.burst.max_freq);
        let phase = rng.random_range(0.0..2.0 * PI);
        for t in 0..t_len {
            let signal = if label == 1 && (onset..onset + burst_len).contains(&t) {
                let j = t - onset;
                amplitude * hann[j] * (2.0 * PI * freq * j as f64 + phase).sin()
            } else {
                0.0
            };
            for _ in 0..c_len {
                windows.push((signal + noise.sample(&mut rng)) as f32);
            }
        }
        labels.push(label);
    }
    let mut ds = Dataset::new(
        Geometry::new(t_len, c_len),
        (0..spec.n as u64).collect(),
        windows,
        Some(labels),
        spec.schema(),
        values,
    )?;
    ds.manifest.source = serde_json::json!({ "synthetic": spec });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n: 50,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.raw_windows(), c.raw_windows());
    }

    #[test]
    fn class_zero_is_pure_noise_and_class_one_carries_the_burst() {
        let spec = SynthSpec {
            n: 40,
            noise_sigma: 0.0,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let labels = ds.labels().unwrap();
        for i in 0..ds.len() {
            let energy: f32 = ds.window(i).iter().map(|v| v * v).sum();
            if labels[i] == 0 {
                assert_eq!(energy, 0.0);
            } else {
                assert!(energy > 0.0);
            }
        }
    }

    #[test]
    fn segment_amplitude_scales_the_burst() {
        let spec = SynthSpec {
            n: 200,
            noise_sigma: 0.0,
            class_prior: 1.0,
            attributes: vec![SynthAttribute {
                name: "g".into(),
                privileged: None,
                segments: vec![
                    SynthSegment { label: "A".into(), prevalence: 0.5, amplitude: 1.0 },
                    SynthSegment { label: "Z".into(), prevalence: 0.5, amplitude: 0.0 },
                ],
            }],
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let g = ds.attribute_values("g").unwrap();
        for i in 0..ds.len() {
            let peak = ds.window(i).iter().fold(0.0f32, |m, v| m.max(v.abs()));
            if g[i] == "Z" {
                assert_eq!(peak, 0.0);
            } else {
                assert!(peak > 0.1);
            }
        }
    }

    #[test]
    fn segment_counts_follow_prevalence() {
        let spec = SynthSpec {
            n: 10_000,
            timesteps: 46,
            channels: 1,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let a = ds.attribute_values("group").unwrap().iter().filter(|v| *v == "A").count() as f64;
        let bound = 3.0 * (10_000.0f64 * 0.25).sqrt();
        assert!((a - 5000.0).abs() <= bound, "{a}");
    }

    #[test]
    fn invalid_prevalence_is_config_error() {
        let mut spec = small();
        spec.attributes[0].segments[0].prevalence = 0.7;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }
}
