//! Train/dev/test split construction.
//!
//! Four split families are built, each (except mic) as an out-of-distribution
//! split paired with an in-distribution control that shares its test set:
//!
//! - [`oov`]: test intents are withheld from training entirely.
//! - [`dbca`]: compositional splits from greedy atom/compound divergence
//!   optimisation.
//! - [`da`]: double-action samples (two utterances, one scenario, two
//!   actions) whose test action pairs never occur in training.
//! - [`mic`]: headset-only training, headset vs. far-field test sets.
//!
//! A split directory holds one id per line in `train.txt`, `dev.txt` and one
//! file per test subset (`test.txt`, or `test_headset.txt` / `test_other.txt`).
//! Double-action members are written as `first_id<TAB>second_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::rng::Rng;
use crate::{Error, Result};

pub mod carve;
pub mod da;
pub mod dbca;
pub mod mic;
pub mod oov;

pub use carve::{carve_dev, random_base_split};
pub use da::{make_da_splits, DaConfig, PairSample};
pub use dbca::{greedy_dbca, make_cg_split, DbcaConfig, DbcaOutcome};
pub use mic::make_mic_split;
pub use oov::{make_oov_split, OovConfig};

pub const TRAIN: &str = "train";
pub const DEV: &str = "dev";
pub const TEST: &str = "test";
pub const TEST_HEADSET: &str = "test_headset";
pub const TEST_OTHER: &str = "test_other";

/// Separator between the two utterance ids of a double-action member.
pub const PAIR_SEPARATOR: char = '\t';

/// Disjoint train/dev/test member sets.
///
/// Members are utterance ids, or `first\tsecond` keys for double-action
/// splits. Most splits have a single test subset named `test`; mic splits
/// carry `test_headset` and `test_other`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub tests: BTreeMap<String, BTreeSet<String>>,
}

impl Split {
    pub fn new(train: BTreeSet<String>, dev: BTreeSet<String>, test: BTreeSet<String>) -> Self {
        Split {
            train,
            dev,
            tests: BTreeMap::from([(TEST.to_owned(), test)]),
        }
    }

    /// The `test` subset (empty when the split has none by that name).
    pub fn test(&self) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.tests.get(TEST).unwrap_or(&EMPTY)
    }

    pub fn test_mut(&mut self) -> &mut BTreeSet<String> {
        self.tests.entry(TEST.to_owned()).or_default()
    }

    /// All subsets in a fixed order: train, dev, then test subsets by name.
    pub fn subsets(&self) -> Vec<(&str, &BTreeSet<String>)> {
        let mut out = vec![(TRAIN, &self.train), (DEV, &self.dev)];
        out.extend(self.tests.iter().map(|(k, v)| (k.as_str(), v)));
        out
    }

    pub fn subset(&self, name: &str) -> Option<&BTreeSet<String>> {
        match name {
            TRAIN => Some(&self.train),
            DEV => Some(&self.dev),
            other => self.tests.get(other),
        }
    }

    /// Checks pairwise disjointness and that every member resolves in `corpus`.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let subsets = self.subsets();
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, ids) in &subsets {
            for id in ids.iter() {
                if let Some(prev) = owner.insert(id.as_str(), name) {
                    return Err(Error::Integrity(format!(
                        "member `{id}` appears in both {prev} and {name}"
                    )));
                }
                members(corpus, id)?;
            }
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, ids) in self.subsets() {
            let path = dir.join(format!("{name}.txt"));
            let mut text = String::with_capacity(ids.len() * 8);
            for id in ids {
                text.push_str(id);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads `train.txt`, `dev.txt` and every `test*.txt` in `dir`.
    pub fn read_dir(dir: &Path) -> Result<Split> {
        let read = |name: &str| -> Result<BTreeSet<String>> {
            let path = dir.join(format!("{name}.txt"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut ids = BTreeSet::new();
            for (i, line) in text.lines().enumerate() {
                let id = line.trim_end_matches('\r');
                if id.trim().is_empty() {
                    continue;
                }
                if !ids.insert(id.to_owned()) {
                    return Err(Error::Integrity(format!(
                        "{}:{}: duplicate member `{id}`",
                        path.display(),
                        i + 1
                    )));
                }
            }
            Ok(ids)
        };
        let mut split = Split {
            train: read(TRAIN)?,
            dev: read(DEV)?,
            tests: BTreeMap::new(),
        };
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".txt") {
                if stem.starts_with(TEST) {
                    split.tests.insert(stem.to_owned(), read(stem)?);
                }
            }
        }
        if split.tests.is_empty() {
            return Err(Error::Integrity(format!(
                "{}: no test subset found",
                dir.display()
            )));
        }
        Ok(split)
    }
}

/// Resolves a split member to its one or two utterances.
pub fn members<'a>(corpus: &'a Corpus, key: &str) -> Result<Vec<&'a Utterance>> {
    match key.split_once(PAIR_SEPARATOR) {
        Some((a, b)) => Ok(vec![corpus.require(a)?, corpus.require(b)?]),
        None => Ok(vec![corpus.require(key)?]),
    }
}

/// Every utterance referenced by `ids`, with multiplicity.
pub fn expand<'a, 'i, I>(corpus: &'a Corpus, ids: I) -> Result<Vec<&'a Utterance>>
where
    I: IntoIterator<Item = &'i String>,
{
    let mut out = Vec::new();
    for id in ids {
        out.extend(members(corpus, id)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Oov,
    Cg,
    DaCg,
    Mic,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Oov => "oov",
            SplitKind::Cg => "cg",
            SplitKind::DaCg => "da_cg",
            SplitKind::Mic => "mic",
        })
    }
}

/// An out-of-distribution split and its matched control.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub kind: SplitKind,
    pub ood: Split,
    /// `None` for mic splits.
    pub control: Option<Split>,
    /// Double-action members keyed by their split key; empty otherwise.
    pub pairs: BTreeMap<String, PairSample>,
}

impl SplitPair {
    /// Checks the shared-test contract and the validity of both splits.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        self.ood.validate(corpus)?;
        if let Some(control) = &self.control {
            control.validate(corpus)?;
            if control.tests != self.ood.tests {
                return Err(Error::Integrity(
                    "control and OOD splits do not share a test set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Divergences achieved by a split, written to its `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub atom_divergence: f64,
    pub compound_divergence: f64,
}

/// Train-test atom and compound divergences of a split.
pub fn achieved(corpus: &Corpus, split: &Split, test_name: &str) -> Result<Achieved> {
    use crate::divergence as dv;
    let train = expand(corpus, &split.train)?;
    let test = expand(corpus, split.subset(test_name).into_iter().flatten())?;
    Ok(Achieved {
        atom_divergence: dv::atom_divergence(
            &dv::atom_distribution(train.iter().copied()),
            &dv::atom_distribution(test.iter().copied()),
        )?,
        compound_divergence: dv::compound_divergence(
            &dv::compound_distribution(train.iter().copied()),
            &dv::compound_distribution(test.iter().copied()),
        )?,
    })
}

/// Groups ids by a key, keeping both levels sorted.
pub(crate) fn group_by<'a, I, F>(ids: I, key: F) -> BTreeMap<String, Vec<String>>
where
    I: IntoIterator<Item = &'a String>,
    F: Fn(&str) -> String,
{
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for id in ids {
        groups.entry(key(id)).or_default().push(id.clone());
    }
    for v in groups.values_mut() {
        v.sort();
    }
    groups
}

/// Seeded choice of `n` ids from a sorted pool.
pub(crate) fn choose_n(pool: &[String], n: usize, rng: &mut Rng) -> Vec<String> {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v.sort();
    v
}
