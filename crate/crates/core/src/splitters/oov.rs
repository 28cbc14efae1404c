//! Out-of-vocabulary intent splits.
//!
//! A shared test set is drawn from the base split's test subset over a few
//! intents. The OOD split trains on the base train/dev minus every sample of
//! those intents; each test intent's scenario keeps at least one other intent,
//! so only the scenario/action combination is new at test time.
//!
//! The control starts from the OOD train/dev and, within every scenario that
//! has a test intent, swaps `floor(n/2)` of its samples for base samples of
//! that scenario's test intents. Per-scenario counts therefore match the OOD
//! split exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{choose_n, group_by, Split, SplitKind, SplitPair};
use crate::corpus::Corpus;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OovConfig {
    /// Number of intents in the shared test set.
    pub test_intent_count: usize,
    /// Eligibility threshold on base-test samples per intent; also the number
    /// of test samples drawn from each chosen intent.
    pub min_samples_per_intent: usize,
    pub seed: u64,
}

impl Default for OovConfig {
    fn default() -> Self {
        OovConfig {
            test_intent_count: 4,
            min_samples_per_intent: 5,
            seed: 0,
        }
    }
}

/// Picks test intents round-robin over scenarios, best-covered first.
fn select_test_intents(corpus: &Corpus, base: &Split, cfg: &OovConfig) -> Result<BTreeSet<String>> {
    let intent = |id: &str| corpus.get(id).map(|u| u.intent.clone()).unwrap_or_default();
    let test_counts: BTreeMap<String, usize> = group_by(base.test(), intent)
        .into_iter()
        .map(|(k, v)| (k, v.len()))
        .collect();
    // intents per scenario present in base train
    let mut train_intents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for id in &base.train {
        let u = corpus.require(id)?;
        train_intents
            .entry(u.scenario.clone())
            .or_default()
            .insert(u.intent.clone());
    }
    let mut candidates: Vec<(&String, usize, String)> = test_counts
        .iter()
        .filter(|(_, &n)| n >= cfg.min_samples_per_intent)
        .map(|(i, &n)| {
            let scenario = crate::corpus::split_intent(i)
                .map(|s| s.0)
                .unwrap_or_default()
                .to_owned();
            (i, n, scenario)
        })
        .collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut rank_in_scenario: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ranked: Vec<(usize, usize, &String, &str)> = candidates
        .iter()
        .enumerate()
        .map(|(pos, (i, _, s))| {
            let r = rank_in_scenario.entry(s.as_str()).or_insert(0);
            *r += 1;
            (*r, pos, *i, s.as_str())
        })
        .collect();
    ranked.sort();

    let mut chosen = BTreeSet::new();
    let mut chosen_per_scenario: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (_, _, intent, scenario) in ranked {
        if chosen.len() == cfg.test_intent_count {
            break;
        }
        let in_train = train_intents.get(scenario);
        let taken = chosen_per_scenario.entry(scenario).or_default();
        let remaining = in_train.map_or(0, |set| {
            set.iter()
                .filter(|i| i.as_str() != intent && !taken.contains(i.as_str()))
                .count()
        });
        if remaining == 0 {
            continue;
        }
        taken.insert(intent.as_str());
        chosen.insert(intent.clone());
    }
    if chosen.len() < cfg.test_intent_count {
        return Err(Error::Construction(format!(
            "only {} intents have at least {} test samples while leaving their scenario another training intent; {} requested",
            chosen.len(),
            cfg.min_samples_per_intent,
            cfg.test_intent_count
        )));
    }
    Ok(chosen)
}

/// Swaps half of each affected scenario's OOD members for test-intent samples.
fn replace_half(
    corpus: &Corpus,
    ood: &BTreeSet<String>,
    pool: &BTreeSet<String>,
    scenarios: &BTreeSet<String>,
    subset: &str,
    rng: &mut Rng,
) -> Result<BTreeSet<String>> {
    let scenario = |id: &str| {
        corpus
            .get(id)
            .map(|u| u.scenario.clone())
            .unwrap_or_default()
    };
    let ood_by = group_by(ood, scenario);
    let pool_by = group_by(pool, scenario);
    let mut out = BTreeSet::new();
    for (s, members) in &ood_by {
        if !scenarios.contains(s) {
            out.extend(members.iter().cloned());
            continue;
        }
        let r = members.len() / 2;
        let available = pool_by.get(s).map_or(&[][..], Vec::as_slice);
        if available.len() < r {
            return Err(Error::Construction(format!(
                "scenario `{s}`: {r} {subset} replacements needed but only {} held-out test-intent samples",
                available.len()
            )));
        }
        let dropped: BTreeSet<String> = choose_n(members, r, rng).into_iter().collect();
        out.extend(members.iter().filter(|m| !dropped.contains(*m)).cloned());
        out.extend(choose_n(available, r, rng));
    }
    Ok(out)
}

/// OOV split and its in-distribution control.
pub fn make_oov_split(corpus: &Corpus, base: &Split, cfg: &OovConfig) -> Result<SplitPair> {
    if cfg.test_intent_count == 0 || cfg.min_samples_per_intent == 0 {
        return Err(Error::Domain(
            "test_intent_count and min_samples_per_intent must be at least 1".into(),
        ));
    }
    base.validate(corpus)?;
    let test_intents = select_test_intents(corpus, base, cfg)?;
    let is_test_intent = |id: &String| {
        corpus
            .get(id)
            .is_some_and(|u| test_intents.contains(&u.intent))
    };

    let mut rng = rng::stream(cfg.seed, "oov-test");
    let by_intent = group_by(base.test().iter().filter(|id| is_test_intent(id)), |id| {
        corpus.get(id).map(|u| u.intent.clone()).unwrap_or_default()
    });
    let mut test = BTreeSet::new();
    for ids in by_intent.values() {
        test.extend(choose_n(ids, cfg.min_samples_per_intent, &mut rng));
    }

    let (pool_train, ood_train): (BTreeSet<String>, BTreeSet<String>) = base
        .train
        .iter()
        .cloned()
        .partition(|id| is_test_intent(id));
    let (pool_dev, ood_dev): (BTreeSet<String>, BTreeSet<String>) =
        base.dev.iter().cloned().partition(|id| is_test_intent(id));

    let scenarios: BTreeSet<String> = test_intents
        .iter()
        .filter_map(|i| crate::corpus::split_intent(i).map(|s| s.0.to_owned()))
        .collect();
    let mut rng = rng::stream(cfg.seed, "oov-replace");
    let control_train = replace_half(
        corpus,
        &ood_train,
        &pool_train,
        &scenarios,
        "train",
        &mut rng,
    )?;
    let control_dev = replace_half(corpus, &ood_dev, &pool_dev, &scenarios, "dev", &mut rng)?;

    Ok(SplitPair {
        kind: SplitKind::Oov,
        ood: Split::new(ood_train, ood_dev, test.clone()),
        control: Some(Split::new(control_train, control_dev, test)),
        pairs: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_fixture, FixtureConfig};
    use crate::splitters::random_base_split;

    fn setup() -> (Corpus, Split) {
        let c = generate_fixture(&FixtureConfig {
            n_scenarios: 2,
            actions_per_scenario: 2,
            samples_per_intent: 40,
            ..FixtureConfig::default()
        })
        .unwrap();
        let base = random_base_split(&c, 0.1, 0.2, 0).unwrap();
        (c, base)
    }

    fn intents(c: &Corpus, ids: &BTreeSet<String>) -> BTreeSet<String> {
        ids.iter()
            .map(|id| c.get(id).unwrap().intent.clone())
            .collect()
    }

    #[test]
    fn ood_train_never_sees_test_intents() {
        let (c, base) = setup();
        let cfg = OovConfig {
            test_intent_count: 2,
            min_samples_per_intent: 6,
            seed: 1,
        };
        let pair = make_oov_split(&c, &base, &cfg).unwrap();
        pair.validate(&c).unwrap();
        let test = intents(&c, pair.ood.test());
        assert_eq!(test.len(), 2);
        assert!(intents(&c, &pair.ood.train).is_disjoint(&test));
        assert!(intents(&c, &pair.ood.dev).is_disjoint(&test));
        let ctl = pair.control.as_ref().unwrap();
        assert!(!intents(&c, &ctl.train).is_disjoint(&test));
        // one test intent per scenario, since each scenario must keep a training intent
        let scen: BTreeSet<&str> = test.iter().map(|i| i.split_once('_').unwrap().0).collect();
        assert_eq!(scen.len(), 2);
    }

    #[test]
    fn control_preserves_scenario_counts() {
        let (c, base) = setup();
        let pair = make_oov_split(
            &c,
            &base,
            &OovConfig {
                test_intent_count: 2,
                min_samples_per_intent: 6,
                seed: 3,
            },
        )
        .unwrap();
        let ctl = pair.control.as_ref().unwrap();
        let scen = |ids: &BTreeSet<String>| -> BTreeMap<String, usize> {
            let mut m = BTreeMap::new();
            for id in ids {
                *m.entry(c.get(id).unwrap().scenario.clone()).or_insert(0) += 1;
            }
            m
        };
        assert_eq!(scen(&ctl.train), scen(&pair.ood.train));
        assert_eq!(scen(&ctl.dev), scen(&pair.ood.dev));
    }

    #[test]
    fn too_many_test_intents_is_construction_error() {
        let (c, base) = setup();
        let err = make_oov_split(
            &c,
            &base,
            &OovConfig {
                test_intent_count: 3,
                min_samples_per_intent: 6,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
    }

    #[test]
    fn insufficient_pool_names_scenario() {
        // three training intents against one held-out intent: half of the OOD
        // train cannot be replaced.
        let c = generate_fixture(&FixtureConfig {
            n_scenarios: 1,
            actions_per_scenario: 4,
            samples_per_intent: 40,
            ..FixtureConfig::default()
        })
        .unwrap();
        let base = random_base_split(&c, 0.1, 0.2, 0).unwrap();
        match make_oov_split(
            &c,
            &base,
            &OovConfig {
                test_intent_count: 1,
                min_samples_per_intent: 4,
                seed: 0,
            },
        ) {
            Err(Error::Construction(msg)) => assert!(msg.contains("s0"), "{msg}"),
            other => panic!("expected construction error, got {other:?}"),
        }
    }
}
