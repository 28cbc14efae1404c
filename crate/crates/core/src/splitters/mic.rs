//! Microphone-mismatch splits: headset-only train/dev, and two test sets
//! (headset / other) restricted to speakers that occur in both.

use std::collections::BTreeSet;

use super::{Split, TEST_HEADSET, TEST_OTHER};
use crate::corpus::Corpus;
use crate::{Error, Result};

pub fn make_mic_split(corpus: &Corpus, original: &Split) -> Result<Split> {
    original.validate(corpus)?;
    let headset_only = |ids: &BTreeSet<String>| -> BTreeSet<String> {
        ids.iter()
            .filter(|id| corpus.get(id).is_some_and(|u| u.headset))
            .cloned()
            .collect()
    };
    let train = headset_only(&original.train);
    let dev = headset_only(&original.dev);

    let (headset, other): (Vec<&String>, Vec<&String>) = original
        .tests
        .values()
        .flatten()
        .partition(|id| corpus.get(id).is_some_and(|u| u.headset));
    let speakers = |ids: &[&String]| -> BTreeSet<String> {
        ids.iter()
            .filter_map(|id| corpus.get(id))
            .map(|u| u.speaker.clone())
            .collect()
    };
    let shared: BTreeSet<String> = speakers(&headset)
        .intersection(&speakers(&other))
        .cloned()
        .collect();
    let keep = |ids: Vec<&String>| -> BTreeSet<String> {
        ids.into_iter()
            .filter(|id| corpus.get(id).is_some_and(|u| shared.contains(&u.speaker)))
            .cloned()
            .collect()
    };
    let test_headset = keep(headset);
    let test_other = keep(other);

    for (name, set) in [
        ("train", &train),
        (TEST_HEADSET, &test_headset),
        (TEST_OTHER, &test_other),
    ] {
        if set.is_empty() {
            return Err(Error::Construction(format!("mic split: `{name}` is empty")));
        }
    }
    let mut split = Split {
        train,
        dev,
        tests: Default::default(),
    };
    split.tests.insert(TEST_HEADSET.into(), test_headset);
    split.tests.insert(TEST_OTHER.into(), test_other);
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_fixture, FixtureConfig, Utterance};
    use crate::splitters::random_base_split;

    #[test]
    fn headset_train_and_matched_speakers() {
        let c = generate_fixture(&FixtureConfig {
            n_speakers: 13,
            ..FixtureConfig::default()
        })
        .unwrap();
        let base = random_base_split(&c, 0.1, 0.2, 0).unwrap();
        let s = make_mic_split(&c, &base).unwrap();
        s.validate(&c).unwrap();
        assert!(s
            .train
            .iter()
            .chain(&s.dev)
            .all(|id| c.get(id).unwrap().headset));
        let spk = |name: &str| -> BTreeSet<String> {
            s.tests[name]
                .iter()
                .map(|id| c.get(id).unwrap().speaker.clone())
                .collect()
        };
        assert_eq!(spk(TEST_HEADSET), spk(TEST_OTHER));
        assert!(s.tests[TEST_HEADSET]
            .iter()
            .all(|id| c.get(id).unwrap().headset));
        assert!(s.tests[TEST_OTHER]
            .iter()
            .all(|id| !c.get(id).unwrap().headset));
    }

    #[test]
    fn disjoint_speakers_fail() {
        let c = Corpus::new(vec![
            Utterance::new("a", "x", "s", "a", true, "p1"),
            Utterance::new("b", "x", "s", "a", true, "p1"),
            Utterance::new("c", "x", "s", "a", false, "p2"),
        ])
        .unwrap();
        let split = Split::new(
            ["a".to_string()].into(),
            BTreeSet::new(),
            ["b".to_string(), "c".to_string()].into(),
        );
        assert!(matches!(
            make_mic_split(&c, &split),
            Err(Error::Construction(_))
        ));
    }
}
