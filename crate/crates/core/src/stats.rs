//! Split audits: subset sizes, label-set overlaps and `C_α` similarities.
//!
//! Comparisons run train against every test subset, then dev against every
//! test subset. Double-action members count once in `members` and twice in
//! `utterances`; label statistics always use the expanded utterances.
//!
//! # TSV layout
//!
//! Two tab-separated blocks separated by one blank line:
//!
//! ```text
//! subset  members  utterances
//! train   ...
//!
//! label     statistic   train-test  dev-test
//! scenario  overlap     ...
//! scenario  similarity  ...
//! ```
//!
//! Label rows come in scenario, action, intent order, each as an `overlap`
//! row (integer) followed by a `similarity` row (two decimals). The second
//! block has one column per subset pair, named `<left>-<right>`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelKind, Utterance};
use crate::divergence::{
    chernoff_coefficient, CategoricalDistribution, ATOM_ALPHA, COMPOUND_ALPHA,
};
use crate::splitters::{expand, Split, DEV, TRAIN};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub scenario: f64,
    pub action: f64,
    pub intent: f64,
}

impl Default for Alphas {
    fn default() -> Self {
        Alphas {
            scenario: ATOM_ALPHA,
            action: ATOM_ALPHA,
            intent: COMPOUND_ALPHA,
        }
    }
}

impl Alphas {
    pub fn get(&self, kind: LabelKind) -> f64 {
        match kind {
            LabelKind::Scenario => self.scenario,
            LabelKind::Action => self.action,
            LabelKind::Intent => self.intent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSize {
    pub subset: String,
    pub members: usize,
    pub utterances: usize,
}

/// One label statistic between two subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelComparison {
    pub label: LabelKind,
    pub left: String,
    pub right: String,
    pub left_labels: usize,
    pub right_labels: usize,
    pub overlap: usize,
    /// `C_α(left ‖ right)`; 0 when either side is empty.
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub sizes: Vec<SubsetSize>,
    pub alphas: Alphas,
    pub comparisons: Vec<LabelComparison>,
}

impl SplitReport {
    pub fn comparison(
        &self,
        label: LabelKind,
        left: &str,
        right: &str,
    ) -> Option<&LabelComparison> {
        self.comparisons
            .iter()
            .find(|c| c.label == label && c.left == left && c.right == right)
    }

    pub fn size(&self, subset: &str) -> Option<&SubsetSize> {
        self.sizes.iter().find(|s| s.subset == subset)
    }

    /// Subset pairs in column order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for c in &self.comparisons {
            let p = (c.left.clone(), c.right.clone());
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Structured,
}

fn compare(
    kind: LabelKind,
    alpha: f64,
    left: &[&Utterance],
    right: &[&Utterance],
) -> Result<(usize, usize, usize, f64)> {
    let dist =
        |us: &[&Utterance]| CategoricalDistribution::from_labels(us.iter().map(|u| u.label(kind)));
    let (p, q) = (dist(left), dist(right));
    let lp: BTreeSet<&str> = p.support().collect();
    let lq: BTreeSet<&str> = q.support().collect();
    let overlap = lp.intersection(&lq).count();
    let similarity = if p.is_empty() || q.is_empty() {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
        0.0
    } else {
        chernoff_coefficient(&p, &q, alpha)?
    };
    Ok((lp.len(), lq.len(), overlap, similarity))
}

/// Audits `split` against `corpus`. Subsets need not be disjoint.
pub fn audit_split(corpus: &Corpus, split: &Split, alphas: &Alphas) -> Result<SplitReport> {
    let mut resolved = Vec::new();
    let mut sizes = Vec::new();
    for (name, ids) in split.subsets() {
        let us = expand(corpus, ids)?;
        sizes.push(SubsetSize {
            subset: name.to_owned(),
            members: ids.len(),
            utterances: us.len(),
        });
        resolved.push((name, us));
    }
    let find = |name: &str| {
        resolved
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, u)| u.as_slice())
    };

    let mut comparisons = Vec::new();
    for kind in LabelKind::ALL {
        let alpha = alphas.get(kind);
        for left in [TRAIN, DEV] {
            for right in split.tests.keys() {
                let (l, r) = (find(left).unwrap_or(&[]), find(right).unwrap_or(&[]));
                let (left_labels, right_labels, overlap, similarity) = compare(kind, alpha, l, r)?;
                comparisons.push(LabelComparison {
                    label: kind,
                    left: left.to_owned(),
                    right: right.clone(),
                    left_labels,
                    right_labels,
                    overlap,
                    similarity,
                });
            }
        }
    }
    Ok(SplitReport {
        sizes,
        alphas: *alphas,
        comparisons,
    })
}

pub fn emit_report(report: &SplitReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialises");
            s.push('\n');
            s
        }
        ReportFormat::Tsv => tsv(report),
    }
}

fn tsv(report: &SplitReport) -> String {
    let mut out = String::from("subset\tmembers\tutterances\n");
    for s in &report.sizes {
        let _ = writeln!(out, "{}\t{}\t{}", s.subset, s.members, s.utterances);
    }
    out.push('\n');
    let pairs = report.pairs();
    out.push_str("label\tstatistic");
    for (l, r) in &pairs {
        let _ = write!(out, "\t{l}-{r}");
    }
    out.push('\n');
    for kind in LabelKind::ALL {
        let cells: Vec<Option<&LabelComparison>> = pairs
            .iter()
            .map(|(l, r)| report.comparison(kind, l, r))
            .collect();
        out.push_str(kind.name());
        out.push_str("\toverlap");
        for c in &cells {
            match c {
                Some(c) => {
                    let _ = write!(out, "\t{}", c.overlap);
                }
                None => out.push('\t'),
            }
        }
        out.push('\n');
        out.push_str(kind.name());
        out.push_str("\tsimilarity");
        for c in &cells {
            match c {
                // `{:.2}` rounds the exact binary value; exact ties go to even
                Some(c) => {
                    let _ = write!(out, "\t{:.2}", c.similarity);
                }
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    out
}

/// Parses the structured form back into a report.
pub fn parse_structured(text: &str) -> Result<SplitReport> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_fixture, FixtureConfig};
    use crate::splitters::{make_oov_split, random_base_split, OovConfig};

    fn fixture() -> Corpus {
        generate_fixture(&FixtureConfig {
            n_scenarios: 3,
            actions_per_scenario: 3,
            samples_per_intent: 30,
            ..FixtureConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn self_comparison_is_exact() {
        let c = fixture();
        let ids: BTreeSet<String> = c.iter().take(50).map(|u| u.id.clone()).collect();
        let split = Split::new(ids.clone(), ids.clone(), ids);
        let r = audit_split(&c, &split, &Alphas::default()).unwrap();
        for cmp in &r.comparisons {
            assert_eq!(cmp.similarity, 1.0);
            assert_eq!(cmp.overlap, cmp.left_labels);
        }
    }

    #[test]
    fn oov_split_has_no_intent_overlap() {
        let c = fixture();
        let base = random_base_split(&c, 0.1, 0.2, 0).unwrap();
        let pair = make_oov_split(
            &c,
            &base,
            &OovConfig {
                test_intent_count: 2,
                min_samples_per_intent: 5,
                seed: 0,
            },
        )
        .unwrap();
        let r = audit_split(&c, &pair.ood, &Alphas::default()).unwrap();
        let intent = r.comparison(LabelKind::Intent, TRAIN, "test").unwrap();
        assert_eq!(intent.overlap, 0);
        assert_eq!(intent.similarity, 0.0);
        let scen = r.comparison(LabelKind::Scenario, TRAIN, "test").unwrap();
        assert!(scen.overlap > 0 && scen.similarity > 0.0);

        let r = audit_split(&c, pair.control.as_ref().unwrap(), &Alphas::default()).unwrap();
        let intent = r.comparison(LabelKind::Intent, TRAIN, "test").unwrap();
        assert!(intent.overlap > 0 && intent.similarity > 0.0);
    }

    #[test]
    fn permuting_the_corpus_leaves_the_report_unchanged() {
        let c = fixture();
        let base = random_base_split(&c, 0.1, 0.2, 3).unwrap();
        let mut rev: Vec<Utterance> = c.utterances().to_vec();
        rev.reverse();
        let c2 = Corpus::new(rev).unwrap();
        let a = audit_split(&c, &base, &Alphas::default()).unwrap();
        let b = audit_split(&c2, &base, &Alphas::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_member_is_integrity_error() {
        let c = fixture();
        let split = Split::new(
            ["nope".to_string()].into(),
            BTreeSet::new(),
            BTreeSet::new(),
        );
        assert!(matches!(
            audit_split(&c, &split, &Alphas::default()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn structured_round_trip_and_tsv_layout() {
        let c = fixture();
        let base = random_base_split(&c, 0.1, 0.2, 1).unwrap();
        let r = audit_split(&c, &base, &Alphas::default()).unwrap();
        assert_eq!(
            parse_structured(&emit_report(&r, ReportFormat::Structured)).unwrap(),
            r
        );

        let tsv = emit_report(&r, ReportFormat::Tsv);
        let blocks: Vec<&str> = tsv.split("\n\n").collect();
        assert_eq!(blocks.len(), 2);
        assert!(blocks[0].starts_with("subset\tmembers\tutterances\ntrain\t"));
        let mut lines = blocks[1].lines();
        assert_eq!(
            lines.next().unwrap(),
            "label\tstatistic\ttrain-test\tdev-test"
        );
        let sim = lines.nth(1).unwrap();
        assert!(sim.starts_with("scenario\tsimilarity\t"));
        for cell in sim.split('\t').skip(2) {
            assert_eq!(cell.split_once('.').unwrap().1.len(), 2, "{cell}");
        }
    }

    #[test]
    fn two_decimal_rounding() {
        let mut r = SplitReport {
            sizes: vec![],
            alphas: Alphas::default(),
            comparisons: vec![],
        };
        for (i, v) in [0.125, 0.375, 0.3249, 1.0].into_iter().enumerate() {
            r.comparisons.push(LabelComparison {
                label: LabelKind::Scenario,
                left: TRAIN.into(),
                right: format!("test{i}"),
                left_labels: 1,
                right_labels: 1,
                overlap: 1,
                similarity: v,
            });
        }
        let tsv = emit_report(&r, ReportFormat::Tsv);
        let line = tsv
            .lines()
            .find(|l| l.starts_with("scenario\tsimilarity"))
            .unwrap();
        assert_eq!(line, "scenario\tsimilarity\t0.12\t0.38\t0.32\t1.00");
    }

    #[test]
    fn overlap_zero_iff_similarity_zero() {
        let c = fixture();
        for seed in 0..5 {
            let base = random_base_split(&c, 0.1, 0.2, seed).unwrap();
            let pair = make_oov_split(
                &c,
                &base,
                &OovConfig {
                    test_intent_count: 3,
                    min_samples_per_intent: 4,
                    seed,
                },
            )
            .unwrap();
            for split in [&pair.ood, pair.control.as_ref().unwrap()] {
                let r = audit_split(&c, split, &Alphas::default()).unwrap();
                for cmp in &r.comparisons {
                    assert_eq!(cmp.overlap == 0, cmp.similarity == 0.0, "{cmp:?}");
                    assert!(cmp.overlap <= cmp.left_labels.min(cmp.right_labels));
                    assert!((0.0..=1.0).contains(&cmp.similarity));
                }
            }
        }
    }
}
