//! Intent-stratified sampling: dev carving and seeded base splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::{group_by, Split};
use crate::corpus::Corpus;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Per-stratum quotas summing to `round(fraction · N)`, each within one of
/// `fraction · n_i` (largest-remainder apportionment, ties by stratum name).
fn apportion(sizes: &[(&str, usize)], fraction: f64) -> Vec<usize> {
    let n: usize = sizes.iter().map(|s| s.1).sum();
    let target = (fraction * n as f64).round() as usize;
    let mut quotas: Vec<usize> = sizes
        .iter()
        .map(|s| (fraction * s.1 as f64).floor() as usize)
        .collect();
    let mut remaining = target.saturating_sub(quotas.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let frac = |i: usize| fraction * sizes[i].1 as f64 - quotas[i] as f64;
    order.sort_by(|&a, &b| {
        frac(b)
            .total_cmp(&frac(a))
            .then_with(|| sizes[a].0.cmp(sizes[b].0))
    });
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i].1 {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}

fn stratified_take(
    strata: &BTreeMap<String, Vec<String>>,
    fraction: f64,
    rng: &mut Rng,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let sizes: Vec<(&str, usize)> = strata.iter().map(|(k, v)| (k.as_str(), v.len())).collect();
    let quotas = apportion(&sizes, fraction);
    let mut taken = BTreeSet::new();
    let mut rest = BTreeSet::new();
    for ((_, ids), q) in strata.iter().zip(quotas) {
        let mut v = ids.clone();
        v.shuffle(rng);
        let (a, b) = v.split_at(q);
        taken.extend(a.iter().cloned());
        rest.extend(b.iter().cloned());
    }
    (taken, rest)
}

fn stratum_key(corpus: &Corpus) -> impl Fn(&str) -> String + '_ {
    move |id: &str| {
        super::members(corpus, id)
            .map(|us| {
                us.iter()
                    .map(|u| u.intent.as_str())
                    .collect::<Vec<_>>()
                    .join("+")
            })
            .unwrap_or_default()
    }
}

/// Moves an intent-stratified, seeded `dev_fraction` of train into dev.
pub fn carve_dev(corpus: &Corpus, split: &Split, dev_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::Domain(format!(
            "dev_fraction must lie in [0, 1), got {dev_fraction}"
        )));
    }
    if !split.dev.is_empty() {
        return Err(Error::Domain(
            "carve_dev expects a split with an empty dev subset".into(),
        ));
    }
    let strata = group_by(&split.train, stratum_key(corpus));
    let mut rng = rng::stream(seed, "carve");
    let (dev, train) = stratified_take(&strata, dev_fraction, &mut rng);
    Ok(Split {
        train,
        dev,
        tests: split.tests.clone(),
    })
}

/// Seeded intent-stratified train/dev/test partition of the whole corpus,
/// standing in for an official split when none is supplied.
pub fn random_base_split(
    corpus: &Corpus,
    dev_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(dev_fraction >= 0.0 && test_fraction > 0.0 && dev_fraction + test_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "need dev_fraction >= 0, test_fraction > 0 and their sum < 1, got {dev_fraction} and {test_fraction}"
        )));
    }
    let all: Vec<String> = corpus.iter().map(|u| u.id.clone()).collect();
    let strata = group_by(&all, stratum_key(corpus));
    let mut rng = rng::stream(seed, "base-split");
    let (test, rest) = stratified_take(&strata, test_fraction, &mut rng);
    let strata = group_by(&rest, stratum_key(corpus));
    let (dev, train) = stratified_take(&strata, dev_fraction / (1.0 - test_fraction), &mut rng);
    Ok(Split::new(train, dev, test))
}
