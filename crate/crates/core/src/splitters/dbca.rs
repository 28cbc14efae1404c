//! Compositional splits by greedy divergence optimisation.
//!
//! The optimiser hill-climbs on
//!
//! ```text
//! L = |D_compound - target| + β · D_atom
//! ```
//!
//! where both divergences compare train against test. Every sample sits in
//! train, test, or the unused remainder. Starting from a seeded random
//! assignment, each pass visits the movable samples in a seeded random order
//! and scores moving each one to the other places in O(1) through two
//! [`PairedDistributionState`]s. A move is committed only if `L` strictly
//! decreases and the train and test sizes stay within ±20% of their nominal
//! sizes. The search stops after a pass without commits or after
//! `max_passes`.
//!
//! With `candidate_pool > 1`, consecutive visits are grouped: the pool is
//! scored in parallel against the same state and only its best improving move
//! is committed (earliest visit wins ties). A pool of 1 is the plain
//! first-improvement walk.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{achieved, carve_dev, Split, SplitKind, SplitPair};
use crate::corpus::{Corpus, Utterance};
use crate::divergence::{CountChange, PairedDistributionState, ATOM_ALPHA, COMPOUND_ALPHA};
use crate::{par, rng, Error, Result};

/// Allowed relative deviation of a subset size from its nominal size.
pub const SIZE_TOLERANCE: f64 = 0.2;

const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbcaConfig {
    pub target_compound_divergence: f64,
    pub atom_weight: f64,
    pub test_fraction: f64,
    /// Nominal share of the corpus assigned to train (before dev carving).
    /// Whatever is neither train nor test stays unused and is available to
    /// the control split.
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub candidate_pool: usize,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for DbcaConfig {
    fn default() -> Self {
        DbcaConfig {
            target_compound_divergence: 0.7,
            atom_weight: 1.0,
            test_fraction: 0.2,
            train_fraction: 0.6,
            dev_fraction: 0.1,
            candidate_pool: 1,
            max_passes: 100,
            seed: 0,
        }
    }
}

impl DbcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_compound_divergence) {
            return Err(Error::Domain(
                "target_compound_divergence must lie in [0, 1]".into(),
            ));
        }
        if self.atom_weight.is_nan() || self.atom_weight < 0.0 {
            return Err(Error::Domain("atom_weight must be nonnegative".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Domain("test_fraction must lie in (0, 1)".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction + self.test_fraction <= 1.0 + 1e-12) {
            return Err(Error::Domain(
                "train_fraction must be positive with train_fraction + test_fraction <= 1".into(),
            ));
        }
        if !(self.dev_fraction >= 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Domain("dev_fraction must lie in [0, 1)".into()));
        }
        if self.candidate_pool == 0 {
            return Err(Error::Domain("candidate_pool must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one optimisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DbcaOutcome {
    pub split: Split,
    pub atom_divergence: f64,
    pub compound_divergence: f64,
    pub objective: f64,
    pub passes: usize,
    pub commits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Train,
    Test,
    Out,
}

struct Engine {
    atoms: PairedDistributionState,
    compounds: PairedDistributionState,
    item_atoms: Vec<[usize; 2]>,
    item_compound: Vec<usize>,
    place: Vec<Place>,
    movable: Vec<usize>,
    /// Places a movable item may be sent to.
    destinations: Vec<Place>,
    train_bounds: (u64, u64),
    test_bounds: (u64, u64),
    target: f64,
    beta: f64,
}

impl Engine {
    #[allow(clippy::too_many_arguments)]
    fn new(
        utterances: &[&Utterance],
        place: Vec<Place>,
        movable: Vec<usize>,
        destinations: Vec<Place>,
        train_bounds: (u64, u64),
        test_bounds: (u64, u64),
        target: f64,
        beta: f64,
    ) -> Result<Self> {
        let mut scen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut act: BTreeMap<&str, usize> = BTreeMap::new();
        let mut intents: BTreeMap<&str, usize> = BTreeMap::new();
        for u in utterances {
            scen.insert(&u.scenario, 0);
            act.insert(&u.action, 0);
            intents.insert(&u.intent, 0);
        }
        for (i, v) in scen.values_mut().enumerate() {
            *v = i;
        }
        let n_scen = scen.len();
        for (i, v) in act.values_mut().enumerate() {
            *v = n_scen + i;
        }
        for (i, v) in intents.values_mut().enumerate() {
            *v = i;
        }
        let item_atoms: Vec<[usize; 2]> = utterances
            .iter()
            .map(|u| [scen[u.scenario.as_str()], act[u.action.as_str()]])
            .collect();
        let item_compound: Vec<usize> = utterances
            .iter()
            .map(|u| intents[u.intent.as_str()])
            .collect();

        let n_atoms = n_scen + act.len();
        let (mut al, mut ar) = (vec![0u64; n_atoms], vec![0u64; n_atoms]);
        let (mut cl, mut cr) = (vec![0u64; intents.len()], vec![0u64; intents.len()]);
        for (i, p) in place.iter().enumerate() {
            let (a, c) = match p {
                Place::Train => (&mut al, &mut cl),
                Place::Test => (&mut ar, &mut cr),
                Place::Out => continue,
            };
            a[item_atoms[i][0]] += 1;
            a[item_atoms[i][1]] += 1;
            c[item_compound[i]] += 1;
        }
        Ok(Engine {
            atoms: PairedDistributionState::new(al, ar, ATOM_ALPHA)?,
            compounds: PairedDistributionState::new(cl, cr, COMPOUND_ALPHA)?,
            item_atoms,
            item_compound,
            place,
            movable,
            destinations,
            train_bounds,
            test_bounds,
            target,
            beta,
        })
    }

    fn objective_of(&self, d_atom: f64, d_compound: f64) -> f64 {
        (d_compound - self.target).abs() + self.beta * d_atom
    }

    fn objective(&self) -> f64 {
        self.objective_of(self.atoms.divergence(), self.compounds.divergence())
    }

    /// `(left, right)` count deltas of moving one sample between places.
    fn deltas(from: Place, to: Place) -> (i64, i64) {
        let side = |p: Place| match p {
            Place::Train => (1, 0),
            Place::Test => (0, 1),
            Place::Out => (0, 0),
        };
        let (fl, fr) = side(from);
        let (tl, tr) = side(to);
        (tl - fl, tr - fr)
    }

    fn changes(&self, item: usize, to: Place) -> ([CountChange; 2], CountChange) {
        let (dl, dr) = Self::deltas(self.place[item], to);
        let [s, a] = self.item_atoms[item];
        let atom = [
            CountChange {
                label: s,
                left: dl,
                right: dr,
            },
            CountChange {
                label: a,
                left: dl,
                right: dr,
            },
        ];
        let compound = CountChange {
            label: self.item_compound[item],
            left: dl,
            right: dr,
        };
        (atom, compound)
    }

    /// Best objective reachable by moving `item`, with its destination, or
    /// `None` when every move breaks a size band.
    fn score(&self, item: usize) -> Option<(f64, Place)> {
        let within = |n: i64, (lo, hi): (u64, u64)| n >= lo as i64 && n <= hi as i64;
        let mut best: Option<(f64, Place)> = None;
        for &to in &self.destinations {
            if to == self.place[item] {
                continue;
            }
            let (dl, dr) = Self::deltas(self.place[item], to);
            let train = self.compounds.left_total() as i64 + dl;
            let test = self.compounds.right_total() as i64 + dr;
            if !within(train, self.train_bounds) || !within(test, self.test_bounds) {
                continue;
            }
            let (atom, compound) = self.changes(item, to);
            let ca = self.atoms.coefficient_after(&atom);
            let cc = self.compounds.coefficient_after(&[compound]);
            let l = self.objective_of(1.0 - ca, 1.0 - cc);
            if best.is_none_or(|(b, _)| l < b) {
                best = Some((l, to));
            }
        }
        best
    }

    fn commit(&mut self, item: usize, to: Place) -> Result<()> {
        let (atom, compound) = self.changes(item, to);
        for c in atom {
            self.atoms.apply(c)?;
        }
        self.compounds.apply(compound)?;
        self.place[item] = to;
        Ok(())
    }

    /// Runs improvement passes; returns `(passes, commits)`.
    fn optimise(
        &mut self,
        pool: usize,
        max_passes: usize,
        rng: &mut rng::Rng,
    ) -> Result<(usize, usize)> {
        let mut current = self.objective();
        let mut order = self.movable.clone();
        let mut passes = 0;
        let mut commits = 0;
        for _ in 0..max_passes {
            passes += 1;
            order.shuffle(rng);
            let mut committed = 0;
            for chunk in order.chunks(pool) {
                let scores = par::map(chunk, |&item| self.score(item));
                let mut best: Option<(usize, f64, Place)> = None;
                for (&item, s) in chunk.iter().zip(scores) {
                    if let Some((s, to)) = s {
                        if s < current - IMPROVEMENT_EPS && best.is_none_or(|(_, b, _)| s < b) {
                            best = Some((item, s, to));
                        }
                    }
                }
                if let Some((item, _, to)) = best {
                    self.commit(item, to)?;
                    let next = self.objective();
                    assert!(
                        next <= current + 1e-9,
                        "objective increased from {current} to {next}"
                    );
                    current = next;
                    committed += 1;
                }
            }
            commits += committed;
            if committed == 0 {
                break;
            }
        }
        Ok((passes, commits))
    }

    fn into_split(self, utterances: &[&Utterance]) -> Split {
        let mut split = Split::default();
        split.test_mut();
        for (u, p) in utterances.iter().zip(&self.place) {
            match p {
                Place::Train => split.train.insert(u.id.clone()),
                Place::Test => split.test_mut().insert(u.id.clone()),
                Place::Out => false,
            };
        }
        split
    }
}

/// `[ceil(0.8·nominal), floor(1.2·nominal)]` clipped to `[hard_min, hard_max]`.
fn band(nominal: f64, hard_min: u64, hard_max: u64) -> (u64, u64) {
    let lo = ((1.0 - SIZE_TOLERANCE) * nominal - 1e-9)
        .ceil()
        .max(hard_min as f64) as u64;
    let hi = ((1.0 + SIZE_TOLERANCE) * nominal + 1e-9)
        .floor()
        .min(hard_max as f64) as u64;
    (lo, hi.max(lo))
}

/// Greedy train/test assignment over the whole corpus. Dev is left empty;
/// samples in neither subset are unused.
pub fn greedy_dbca(corpus: &Corpus, cfg: &DbcaConfig) -> Result<DbcaOutcome> {
    cfg.validate()?;
    if corpus.len() < 2 {
        return Err(Error::Domain(
            "greedy_dbca needs at least two utterances".into(),
        ));
    }
    let utterances: Vec<&Utterance> = corpus.iter().collect();
    let n = utterances.len();
    let n_test = ((cfg.test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let n_train = ((cfg.train_fraction * n as f64).round() as usize).clamp(1, n - n_test);

    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut init_rng);
    let mut place = vec![Place::Out; n];
    for &i in &ids[..n_test] {
        place[i] = Place::Test;
    }
    for &i in &ids[n_test..n_test + n_train] {
        place[i] = Place::Train;
    }
    let mut engine = Engine::new(
        &utterances,
        place,
        (0..n).collect(),
        vec![Place::Train, Place::Test, Place::Out],
        band(n_train as f64, 1, n as u64 - 1),
        band(n_test as f64, 1, n as u64 - 1),
        cfg.target_compound_divergence,
        cfg.atom_weight,
    )?;
    let mut visit = rng::stream(cfg.seed, "visit-order");
    let (passes, commits) = engine.optimise(cfg.candidate_pool, cfg.max_passes, &mut visit)?;
    let split = engine.into_split(&utterances);
    finish(corpus, split, cfg, passes, commits)
}

fn finish(
    corpus: &Corpus,
    split: Split,
    cfg: &DbcaConfig,
    passes: usize,
    commits: usize,
) -> Result<DbcaOutcome> {
    let a = achieved(corpus, &split, super::TEST)?;
    let objective = (a.compound_divergence - cfg.target_compound_divergence).abs()
        + cfg.atom_weight * a.atom_divergence;
    Ok(DbcaOutcome {
        split,
        atom_divergence: a.atom_divergence,
        compound_divergence: a.compound_divergence,
        objective,
        passes,
        commits,
    })
}

/// Re-selects train from every sample outside a fixed test set, starting
/// from `initial_train`; train size stays within the size band around
/// `|initial_train|`.
pub fn optimise_train_subset(
    corpus: &Corpus,
    initial_train: &BTreeSet<String>,
    test: &BTreeSet<String>,
    cfg: &DbcaConfig,
) -> Result<DbcaOutcome> {
    cfg.validate()?;
    if initial_train.is_empty() || test.is_empty() {
        return Err(Error::Domain(
            "train-subset optimisation needs a train and a test set".into(),
        ));
    }
    let mut utterances: Vec<&Utterance> = Vec::with_capacity(corpus.len());
    let mut place = Vec::with_capacity(corpus.len());
    let mut movable = Vec::new();
    for u in corpus.iter() {
        let p = if test.contains(&u.id) {
            Place::Test
        } else if initial_train.contains(&u.id) {
            Place::Train
        } else {
            Place::Out
        };
        if p != Place::Test {
            movable.push(utterances.len());
        }
        utterances.push(u);
        place.push(p);
    }
    let n_test = place.iter().filter(|p| **p == Place::Test).count() as u64;
    if n_test != test.len() as u64 {
        return Err(Error::Integrity(
            "test set references ids outside the corpus".into(),
        ));
    }
    let n_free = movable.len() as u64;
    let mut engine = Engine::new(
        &utterances,
        place,
        movable,
        vec![Place::Train, Place::Out],
        band(initial_train.len() as f64, 1, n_free),
        (n_test, n_test),
        cfg.target_compound_divergence,
        cfg.atom_weight,
    )?;
    let mut visit = rng::stream(cfg.seed, "control-visit-order");
    let (passes, commits) = engine.optimise(cfg.candidate_pool, cfg.max_passes, &mut visit)?;
    let split = engine.into_split(&utterances);
    finish(corpus, split, cfg, passes, commits)
}

/// Compositional split plus a non-compositional control on the same test set.
///
/// The OOD side is [`greedy_dbca`] with `cfg`'s target. The control keeps the
/// OOD test set and re-selects train from all remaining samples with target
/// 0. Both then carve dev from train.
pub fn make_cg_split(corpus: &Corpus, cfg: &DbcaConfig) -> Result<SplitPair> {
    let ood = greedy_dbca(corpus, cfg)?;
    let control_cfg = DbcaConfig {
        target_compound_divergence: 0.0,
        ..cfg.clone()
    };
    let control = optimise_train_subset(corpus, &ood.split.train, ood.split.test(), &control_cfg)?;
    let ood_split = carve_dev(corpus, &ood.split, cfg.dev_fraction, cfg.seed)?;
    let control_split = carve_dev(corpus, &control.split, cfg.dev_fraction, cfg.seed)?;
    Ok(SplitPair {
        kind: SplitKind::Cg,
        ood: ood_split,
        control: Some(control_split),
        pairs: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_fixture, FixtureConfig};

    fn grid(ns: usize, na: usize, per: usize, seed: u64) -> Corpus {
        generate_fixture(&FixtureConfig {
            n_scenarios: ns,
            actions_per_scenario: na,
            samples_per_intent: per,
            seed,
            ..FixtureConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn symmetric_fixture_reaches_diagonal_split() {
        let c = grid(2, 2, 20, 1);
        for seed in 0..10 {
            let cfg = DbcaConfig {
                target_compound_divergence: 1.0,
                atom_weight: 1.0,
                test_fraction: 0.5,
                train_fraction: 0.5,
                seed,
                ..DbcaConfig::default()
            };
            let out = greedy_dbca(&c, &cfg).unwrap();
            assert_eq!(out.atom_divergence, 0.0, "seed {seed}: {out:?}");
            assert_eq!(out.compound_divergence, 1.0, "seed {seed}");
        }
    }

    #[test]
    fn zero_target_gives_similar_distributions() {
        let c = grid(2, 2, 20, 1);
        let cfg = DbcaConfig {
            target_compound_divergence: 0.0,
            test_fraction: 0.5,
            train_fraction: 0.5,
            ..DbcaConfig::default()
        };
        let out = greedy_dbca(&c, &cfg).unwrap();
        assert!(
            out.compound_divergence <= 0.05 && out.atom_divergence <= 0.05,
            "{out:?}"
        );
    }

    #[test]
    fn deterministic_and_pool_invariant_to_threads() {
        let c = grid(3, 3, 15, 2);
        let cfg = DbcaConfig {
            candidate_pool: 8,
            seed: 5,
            ..DbcaConfig::default()
        };
        let a = par::with_threads(1, || greedy_dbca(&c, &cfg).unwrap());
        let b = par::with_threads(4, || greedy_dbca(&c, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn test_size_stays_in_band() {
        let c = grid(4, 3, 20, 3);
        let cfg = DbcaConfig::default();
        let out = greedy_dbca(&c, &cfg).unwrap();
        let nominal = 0.2 * c.len() as f64;
        let t = out.split.test().len() as f64;
        assert!(t >= 0.8 * nominal - 1e-9 && t <= 1.2 * nominal + 1e-9);
        assert!(out.split.train.is_disjoint(out.split.test()));
    }

    #[test]
    fn cg_pair_separates_compound_divergence() {
        let c = grid(4, 4, 30, 4);
        let cfg = DbcaConfig {
            seed: 1,
            ..DbcaConfig::default()
        };
        let pair = make_cg_split(&c, &cfg).unwrap();
        pair.validate(&c).unwrap();
        let ood = achieved(&c, &pair.ood, "test").unwrap();
        let ctl = achieved(&c, pair.control.as_ref().unwrap(), "test").unwrap();
        assert!(
            ood.compound_divergence - ctl.compound_divergence >= 0.3,
            "{ood:?} {ctl:?}"
        );
        assert!(
            ood.atom_divergence <= 0.15 && ctl.atom_divergence <= 0.15,
            "{ood:?} {ctl:?}"
        );
    }
}
