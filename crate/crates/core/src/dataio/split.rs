use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, SPLIT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.as_array();
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || ((f.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be in [0, 1] and sum to 1, got {} / {} / {}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub assignment: Vec<Split>,
    /// `"label"` plus every attribute that took part in stratification.
    pub stratified_by: Vec<String>,
    pub warnings: Vec<String>,
}

/// Deterministic split of `ds`, stratified jointly by label and every
/// attribute. When some joint stratum is too small to place a window in
/// every nonempty split, stratification falls back to the label alone.
///
/// Windows are shuffled within each stratum, strata are laid end to end, and
/// each window in turn goes to the split furthest below its quota, so every
/// stratum and the whole set are apportioned to within one window.
pub fn stratified_split(ds: &Dataset, fractions: SplitFractions, seed: u64) -> Result<SplitOutcome> {
    fractions.validate()?;
    let n = ds.len();
    let labels: Vec<u8> = ds.labels().map_or_else(|| vec![0; n], <[u8]>::to_vec);
    let frac = fractions.as_array();
    let min_frac = frac.iter().copied().filter(|&f| f > 0.0).fold(1.0, f64::min);
    let needed = (1.0 / min_frac).ceil() as usize;

    let joint_key = |i: usize| -> Vec<String> {
        let mut key = vec![labels[i].to_string()];
        key.extend(ds.all_attribute_values().iter().map(|col| col[i].clone()));
        key
    };
    let mut strata = group_by(n, joint_key);
    let mut warnings = Vec::new();
    let mut by: Vec<String> = vec!["label".into()];
    by.extend(ds.attributes().iter().map(|a| a.name.clone()));
    if let Some((key, members)) = strata.iter().find(|(_, m)| m.len() < needed) {
        let msg = format!(
            "stratum {key:?} has {} windows, fewer than the {needed} needed for every split; stratifying by label only",
            members.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        strata = group_by(n, |i| vec![labels[i].to_string()]);
        by.truncate(1);
    }

    let seeds = SeedTree::new(seed);
    let mut order = Vec::with_capacity(n);
    for (s, members) in strata.values_mut().enumerate() {
        members.shuffle(&mut seeds.stream(SPLIT, &[s as u64]));
        order.extend_from_slice(members);
    }
    let mut assignment = vec![Split::Train; n];
    let mut counts = [0usize; 3];
    for (k, &i) in order.iter().enumerate() {
        let deficit = |s: usize| frac[s] * (k + 1) as f64 - counts[s] as f64;
        let best = (0..3).fold(0, |b, s| if deficit(s) > deficit(b) { s } else { b });
        counts[best] += 1;
        assignment[i] = Split::ALL[best];
    }
    Ok(SplitOutcome {
        assignment,
        stratified_by: by,
        warnings,
    })
}

fn group_by(n: usize, key: impl Fn(usize) -> Vec<String>) -> BTreeMap<Vec<String>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(key(i)).or_default().push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{AttributeSchema, Dataset};
    use crate::models::Geometry;

    fn dataset(n: usize, rare_segment: bool) -> Dataset {
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 10 < 3)).collect();
        let values: Vec<String> = (0..n)
            .map(|i| match (rare_segment, i) {
                (true, 0) => "C".into(),
                _ if i % 4 == 0 => "B".into(),
                _ => "A".into(),
            })
            .collect();
        let schema = vec![AttributeSchema {
            name: "g".into(),
            segments: vec!["A".into(), "B".into(), "C".into()],
            privileged: None,
        }];
        Dataset::new(Geometry::new(1, 1), (0..n as u64).collect(), vec![0.0; n], Some(labels), schema, vec![values])
            .unwrap()
    }

    fn sizes(a: &[Split]) -> [usize; 3] {
        let mut c = [0; 3];
        for s in a {
            c[Split::ALL.iter().position(|x| x == s).unwrap()] += 1;
        }
        c
    }

    #[test]
    fn sizes_follow_fractions() {
        let out = stratified_split(&dataset(1000, false), SplitFractions::default(), 3).unwrap();
        let [tr, va, te] = sizes(&out.assignment);
        assert!((699..=701).contains(&tr) && (149..=151).contains(&va) && (149..=151).contains(&te), "{tr} {va} {te}");
        assert_eq!(tr + va + te, 1000);
        assert_eq!(out.stratified_by, vec!["label", "g"]);
    }

    #[test]
    fn same_seed_same_assignment() {
        let ds = dataset(300, false);
        let a = stratified_split(&ds, SplitFractions::default(), 9).unwrap();
        let b = stratified_split(&ds, SplitFractions::default(), 9).unwrap();
        let c = stratified_split(&ds, SplitFractions::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn label_prevalence_is_preserved() {
        let ds = dataset(1000, false);
        let out = stratified_split(&ds, SplitFractions::default(), 1).unwrap();
        let global = 0.3;
        for split in Split::ALL {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| out.assignment[i] == split).collect();
            let pos = members.iter().filter(|&&i| ds.labels().unwrap()[i] == 1).count();
            assert!((pos as f64 / members.len() as f64 - global).abs() < 0.02);
        }
    }

    #[test]
    fn tiny_segment_falls_back_to_label_only() {
        let out = stratified_split(&dataset(200, true), SplitFractions::default(), 1).unwrap();
        assert_eq!(out.stratified_by, vec!["label"]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let bad = SplitFractions {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(matches!(stratified_split(&dataset(10, false), bad, 0), Err(Error::Config(_))));
    }
}
