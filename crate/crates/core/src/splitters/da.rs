//! Double-action splits.
//!
//! A sample is a pair of utterances from the same scenario with two different
//! actions; the task is to predict the scenario from both. Pairs are drawn
//! inside each base subset (train pairs from base-train utterances, etc.), and
//! an utterance may take part in several pairs.
//!
//! For every scenario some unordered action pairs are reserved for test. The
//! OOD split trains only on the other action pairs. The control replaces
//! `floor(n/2)` of each scenario's OOD train (and dev) pairs with fresh pairs
//! over the reserved test action pairs, keeping per-scenario counts.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{choose_n, Split, SplitKind, SplitPair, PAIR_SEPARATOR};
use crate::corpus::Corpus;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Two utterances sharing a scenario with distinct actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub first: String,
    pub second: String,
    pub scenario: String,
    /// Sorted, so `(a, b)` and `(b, a)` compare equal.
    pub action_pair: (String, String),
}

impl PairSample {
    pub fn new(corpus: &Corpus, first: &str, second: &str) -> Result<Self> {
        let a = corpus.require(first)?;
        let b = corpus.require(second)?;
        if a.scenario != b.scenario {
            return Err(Error::Construction(format!(
                "pair ({first}, {second}) mixes scenarios `{}` and `{}`",
                a.scenario, b.scenario
            )));
        }
        if a.action == b.action {
            return Err(Error::Construction(format!(
                "pair ({first}, {second}) repeats action `{}`",
                a.action
            )));
        }
        Ok(PairSample {
            first: first.to_owned(),
            second: second.to_owned(),
            scenario: a.scenario.clone(),
            action_pair: action_pair(&a.action, &b.action),
        })
    }

    /// Split-file key: `first<TAB>second`.
    pub fn key(&self) -> String {
        format!("{}{PAIR_SEPARATOR}{}", self.first, self.second)
    }
}

fn action_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaConfig {
    pub train_pairs_per_scenario: usize,
    pub dev_pairs_per_scenario: usize,
    pub test_pairs_per_scenario: usize,
    /// Scenarios to use. `None` picks every scenario where the construction is
    /// satisfiable; an explicit list fails on the first one that is not.
    pub scenarios: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for DaConfig {
    fn default() -> Self {
        DaConfig {
            train_pairs_per_scenario: 200,
            dev_pairs_per_scenario: 30,
            test_pairs_per_scenario: 30,
            scenarios: None,
            seed: 0,
        }
    }
}

/// Utterance ids per action, for one scenario and one base subset.
type ByAction = BTreeMap<String, Vec<String>>;

fn by_scenario_action(
    corpus: &Corpus,
    ids: &BTreeSet<String>,
) -> Result<BTreeMap<String, ByAction>> {
    let mut out: BTreeMap<String, ByAction> = BTreeMap::new();
    for id in ids {
        let u = corpus.require(id)?;
        out.entry(u.scenario.clone())
            .or_default()
            .entry(u.action.clone())
            .or_default()
            .push(id.clone());
    }
    Ok(out)
}

/// Draws `count` distinct utterance pairs over `allowed` action pairs.
fn sample_pairs(
    corpus: &Corpus,
    by_action: &ByAction,
    allowed: &[(String, String)],
    count: usize,
    taken: &mut BTreeSet<(String, String)>,
    scenario: &str,
    rng: &mut Rng,
) -> Result<Vec<PairSample>> {
    let empty = Vec::new();
    let pools: Vec<(&Vec<String>, &Vec<String>)> = allowed
        .iter()
        .map(|(a, b)| {
            (
                by_action.get(a).unwrap_or(&empty),
                by_action.get(b).unwrap_or(&empty),
            )
        })
        .filter(|(x, y)| !x.is_empty() && !y.is_empty())
        .collect();
    let free: usize = pools
        .iter()
        .map(|(x, y)| {
            let total = x.len() * y.len();
            let used = x
                .iter()
                .flat_map(|f| y.iter().map(move |s| (f.clone(), s.clone())))
                .filter(|k| taken.contains(k))
                .count();
            total - used
        })
        .sum();
    if free < count {
        return Err(Error::Construction(format!(
            "scenario `{scenario}`: {count} pairs requested but only {free} distinct utterance pairs available"
        )));
    }
    let mut out = Vec::with_capacity(count);
    if count * 2 > free {
        // dense regime: enumerate and shuffle
        let mut all: Vec<(String, String)> = pools
            .iter()
            .flat_map(|(x, y)| {
                x.iter()
                    .flat_map(move |f| y.iter().map(move |s| (f.clone(), s.clone())))
            })
            .filter(|k| !taken.contains(k))
            .collect();
        all.shuffle(rng);
        for (f, s) in all.into_iter().take(count) {
            taken.insert((f.clone(), s.clone()));
            out.push(PairSample::new(corpus, &f, &s)?);
        }
    } else {
        while out.len() < count {
            let (x, y) = pools[rng.gen_range(0..pools.len())];
            let f = &x[rng.gen_range(0..x.len())];
            let s = &y[rng.gen_range(0..y.len())];
            if taken.insert((f.clone(), s.clone())) {
                out.push(PairSample::new(corpus, f, s)?);
            }
        }
    }
    Ok(out)
}

/// Scenario plan: reserved test action pairs and the remaining ones.
struct Plan {
    test_pairs: Vec<(String, String)>,
    other_pairs: Vec<(String, String)>,
}

/// Action pairs available in a scenario: both actions present in every subset.
fn candidate_pairs(groups: [Option<&ByAction>; 3]) -> Vec<(String, String)> {
    let mut actions: Option<BTreeSet<&String>> = None;
    for g in groups {
        let set: BTreeSet<&String> = g.map(|m| m.keys().collect()).unwrap_or_default();
        actions = Some(match actions {
            None => set,
            Some(prev) => prev.intersection(&set).copied().collect(),
        });
    }
    let actions: Vec<&String> = actions.unwrap_or_default().into_iter().collect();
    let mut pairs = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        for b in &actions[i + 1..] {
            pairs.push(((*a).clone(), (*b).clone()));
        }
    }
    pairs
}

/// Reserves test action pairs for every scenario.
///
/// Action labels can be shared between scenarios, so reservation is global:
/// all action pairs get one seeded rank, each scenario reserves its best
/// ranked third (at least one), and no scenario may train on any pair
/// reserved anywhere. Scenarios left without a training pair are dropped and
/// the reservation is recomputed, unless they were requested explicitly.
fn plan(
    candidates: &BTreeMap<String, Vec<(String, String)>>,
    explicit: bool,
    rng: &mut Rng,
) -> Result<BTreeMap<String, Plan>> {
    let mut universe: Vec<&(String, String)> = candidates.values().flatten().collect();
    universe.sort();
    universe.dedup();
    universe.shuffle(rng);
    let rank: BTreeMap<&(String, String), usize> =
        universe.iter().enumerate().map(|(i, p)| (*p, i)).collect();

    let mut active: BTreeSet<&String> = candidates.keys().collect();
    loop {
        let mut reserved: BTreeMap<&String, Vec<(String, String)>> = BTreeMap::new();
        for s in &active {
            let mut pairs = candidates[*s].clone();
            pairs.sort_by_key(|p| rank[p]);
            pairs.truncate((candidates[*s].len() / 3).max(1));
            pairs.sort();
            reserved.insert(*s, pairs);
        }
        let global: BTreeSet<&(String, String)> = reserved.values().flatten().collect();
        let mut failed = Vec::new();
        let mut plans = BTreeMap::new();
        for s in &active {
            let other: Vec<(String, String)> = candidates[*s]
                .iter()
                .filter(|p| !global.contains(p))
                .cloned()
                .collect();
            if other.is_empty() {
                failed.push(*s);
            } else {
                plans.insert(
                    (*s).clone(),
                    Plan {
                        test_pairs: reserved[s].clone(),
                        other_pairs: other,
                    },
                );
            }
        }
        if failed.is_empty() {
            return Ok(plans);
        }
        if explicit {
            return Err(Error::Construction(format!(
                "scenario `{}`: every action pair is reserved for test somewhere, none left for training",
                failed[0]
            )));
        }
        for s in failed {
            active.remove(s);
        }
        if active.is_empty() {
            return Ok(BTreeMap::new());
        }
    }
}

fn keys(pairs: &[PairSample]) -> BTreeSet<String> {
    pairs.iter().map(PairSample::key).collect()
}

/// Double-action CG split and its control over a base utterance split.
pub fn make_da_splits(corpus: &Corpus, base: &Split, cfg: &DaConfig) -> Result<SplitPair> {
    base.validate(corpus)?;
    let train = by_scenario_action(corpus, &base.train)?;
    let dev = by_scenario_action(corpus, &base.dev)?;
    let test = by_scenario_action(corpus, base.test())?;
    let needs_dev = cfg.dev_pairs_per_scenario > 0;

    let explicit = cfg.scenarios.is_some();
    let scenarios: Vec<String> = match &cfg.scenarios {
        Some(list) => list.clone(),
        None => corpus.scenarios().iter().cloned().collect(),
    };
    let mut candidates = BTreeMap::new();
    for s in &scenarios {
        let groups = [
            train.get(s),
            if needs_dev { dev.get(s) } else { train.get(s) },
            test.get(s),
        ];
        let pairs = candidate_pairs(groups);
        if pairs.len() < 2 {
            if explicit {
                return Err(Error::Construction(format!(
                    "scenario `{s}`: {} action pair(s) available in every subset; at least two are needed to keep test action pairs out of training",
                    pairs.len()
                )));
            }
            continue;
        }
        candidates.insert(s.clone(), pairs);
    }
    let plans = plan(&candidates, explicit, &mut rng::stream(cfg.seed, "da-plan"))?;
    if plans.is_empty() {
        return Err(Error::Construction(
            "no scenario admits a double-action split".into(),
        ));
    }

    let mut rng = rng::stream(cfg.seed, "da-pairs");
    let mut all: BTreeMap<String, PairSample> = BTreeMap::new();
    let mut ood = Split::default();
    let mut control = Split::default();
    let empty = ByAction::new();
    for (s, plan) in &plans {
        let tr = train.get(s).unwrap_or(&empty);
        let dv = dev.get(s).unwrap_or(&empty);
        let te = test.get(s).unwrap_or(&empty);
        let mut taken = BTreeSet::new();
        let test_pairs = sample_pairs(
            corpus,
            te,
            &plan.test_pairs,
            cfg.test_pairs_per_scenario,
            &mut taken,
            s,
            &mut rng,
        )?;
        let train_pairs = sample_pairs(
            corpus,
            tr,
            &plan.other_pairs,
            cfg.train_pairs_per_scenario,
            &mut taken,
            s,
            &mut rng,
        )?;
        let dev_pairs = sample_pairs(
            corpus,
            dv,
            &plan.other_pairs,
            cfg.dev_pairs_per_scenario,
            &mut taken,
            s,
            &mut rng,
        )?;

        // control: swap half for pairs over the reserved test action pairs
        let swap = |ood_pairs: &[PairSample],
                    pool: &ByAction,
                    taken: &mut BTreeSet<(String, String)>,
                    rng: &mut Rng|
         -> Result<Vec<PairSample>> {
            let r = ood_pairs.len() / 2;
            let ks: Vec<String> = ood_pairs.iter().map(PairSample::key).collect();
            let dropped: BTreeSet<String> = choose_n(&ks, r, rng).into_iter().collect();
            let mut kept: Vec<PairSample> = ood_pairs
                .iter()
                .filter(|p| !dropped.contains(&p.key()))
                .cloned()
                .collect();
            kept.extend(sample_pairs(
                corpus,
                pool,
                &plan.test_pairs,
                r,
                taken,
                s,
                rng,
            )?);
            Ok(kept)
        };
        let control_train = swap(&train_pairs, tr, &mut taken, &mut rng)?;
        let control_dev = swap(&dev_pairs, dv, &mut taken, &mut rng)?;

        ood.train.extend(keys(&train_pairs));
        ood.dev.extend(keys(&dev_pairs));
        ood.test_mut().extend(keys(&test_pairs));
        control.train.extend(keys(&control_train));
        control.dev.extend(keys(&control_dev));
        control.test_mut().extend(keys(&test_pairs));
        for p in test_pairs
            .into_iter()
            .chain(train_pairs)
            .chain(dev_pairs)
            .chain(control_train)
            .chain(control_dev)
        {
            all.insert(p.key(), p);
        }
    }
    Ok(SplitPair {
        kind: SplitKind::DaCg,
        ood,
        control: Some(control),
        pairs: all,
    })
}
