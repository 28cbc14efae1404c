//! Integrated Gradients over [`LinearModel`] and top-word frequency matrices.
//!
//! The baseline is the zero feature vector. The path integral uses the
//! right-point Riemann rule over `steps` points `t/m · x`, `t = 1..=m`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::eval::{featurize, member_label, softmax, Features, LinearModel, Target};
use crate::splitters::members;
use crate::{par, Error, Result};

pub const MATRIX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionTarget {
    Predicted,
    True,
}

/// Function being attributed: the class logit or its softmax probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionOutput {
    Logit,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub steps: usize,
    pub target: AttributionTarget,
    pub output: AttributionOutput,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            steps: 50,
            target: AttributionTarget::Predicted,
            output: AttributionOutput::Softmax,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Domain("steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Value of the attributed function at `x`.
pub fn output_value(
    model: &LinearModel,
    x: &Features,
    class: usize,
    output: AttributionOutput,
) -> f64 {
    let z = model.logits(x);
    match output {
        AttributionOutput::Logit => z[class],
        AttributionOutput::Softmax => softmax(&z)[class],
    }
}

fn check(model: &LinearModel, x: &Features, class: usize) -> Result<()> {
    if class >= model.n_classes() {
        return Err(Error::Domain(format!(
            "class index {class} out of range for {} classes",
            model.n_classes()
        )));
    }
    if let Some(&(i, _)) = x.0.iter().find(|(i, _)| *i >= model.dim()) {
        return Err(Error::Domain(format!(
            "feature index {i} outside vocabulary of {}",
            model.dim()
        )));
    }
    Ok(())
}

/// Attributions for the nonzero entries of `x`, in index order.
pub fn integrated_gradients(
    model: &LinearModel,
    x: &Features,
    class: usize,
    cfg: &AttributionConfig,
) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    check(model, x, class)?;
    let m = cfg.steps;
    let nc = model.n_classes();
    let mut acc = vec![0.0; x.0.len()];
    for t in 1..=m {
        let alpha = t as f64 / m as f64;
        match cfg.output {
            AttributionOutput::Logit => {
                for (a, &(i, _)) in acc.iter_mut().zip(&x.0) {
                    *a += model.weight(class, i);
                }
            }
            AttributionOutput::Softmax => {
                let scaled = Features(x.0.iter().map(|&(i, v)| (i, alpha * v)).collect());
                let p = model.probabilities(&scaled);
                for (a, &(i, _)) in acc.iter_mut().zip(&x.0) {
                    let mean_w: f64 = (0..nc).map(|j| p[j] * model.weight(j, i)).sum();
                    *a += p[class] * (model.weight(class, i) - mean_w);
                }
            }
        }
    }
    Ok(x.0
        .iter()
        .zip(acc)
        .map(|(&(i, v), a)| (i, v * a / m as f64))
        .collect())
}

/// Dense-input form of [`integrated_gradients`].
pub fn integrated_gradients_dense(
    model: &LinearModel,
    x: &[f64],
    class: usize,
    cfg: &AttributionConfig,
) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(Error::Domain(format!(
            "input has {} features, model expects {}",
            x.len(),
            model.dim()
        )));
    }
    let sparse = Features::from_dense(x);
    let mut out = vec![0.0; x.len()];
    for (i, a) in integrated_gradients(model, &sparse, class, cfg)? {
        out[i] = a;
    }
    Ok(out)
}

/// `Σ attributions − (F(x) − F(0))`.
pub fn completeness_residual(
    model: &LinearModel,
    x: &Features,
    class: usize,
    attributions: &[(usize, f64)],
    output: AttributionOutput,
) -> f64 {
    let total: f64 = attributions.iter().map(|a| a.1).sum();
    total
        - (output_value(model, x, class, output)
            - output_value(model, &Features::default(), class, output))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAttribution {
    pub word: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub id: String,
    pub predicted: String,
    pub gold: String,
    /// In-vocabulary words in order of first occurrence.
    pub attributions: Vec<WordAttribution>,
    pub top_word: String,
    pub completeness_residual: f64,
}

impl AttributionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }
}

/// Attributes one member and picks the word with the highest attribution.
/// Ties go to the word that occurs first.
pub fn top_word(
    model: &LinearModel,
    id: &str,
    utterances: &[&Utterance],
    gold: &str,
    cfg: &AttributionConfig,
) -> Result<AttributionRecord> {
    let x = featurize(utterances, &model.vocab);
    if x.is_zero() {
        return Err(Error::NoAttribution(format!(
            "`{id}` has no in-vocabulary word"
        )));
    }
    let predicted = model.predict(&x);
    let class = match cfg.target {
        AttributionTarget::Predicted => predicted,
        AttributionTarget::True => model.class_index(gold).ok_or_else(|| {
            Error::NoAttribution(format!("`{id}`: gold class `{gold}` unknown to the model"))
        })?,
    };
    let attr = integrated_gradients(model, &x, class, cfg)?;
    let residual = completeness_residual(model, &x, class, &attr, cfg.output);
    let value_of: BTreeMap<usize, f64> = attr.into_iter().collect();

    let mut words: Vec<WordAttribution> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for t in utterances.iter().flat_map(|u| &u.tokens) {
        if let Some(i) = model.vocab.index(t) {
            if seen.insert(i) {
                words.push(WordAttribution {
                    word: t.clone(),
                    value: value_of[&i],
                });
            }
        }
    }
    let mut best = 0;
    for (k, w) in words.iter().enumerate() {
        if w.value > words[best].value {
            best = k;
        }
    }
    Ok(AttributionRecord {
        id: id.to_owned(),
        predicted: model.classes[predicted].clone(),
        gold: gold.to_owned(),
        top_word: words[best].word.clone(),
        attributions: words,
        completeness_residual: residual,
    })
}

/// Records for every member that has an in-vocabulary word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionBatch {
    pub config: AttributionConfig,
    pub records: Vec<AttributionRecord>,
    /// Members skipped for lack of an attribution.
    pub skipped: Vec<String>,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
}

pub fn attribute_members(
    model: &LinearModel,
    corpus: &Corpus,
    ids: &[String],
    target: Target,
    cfg: &AttributionConfig,
) -> Result<AttributionBatch> {
    cfg.validate()?;
    let results = par::map(
        ids,
        |id| -> Result<std::result::Result<AttributionRecord, String>> {
            let us = members(corpus, id)?;
            let gold = member_label(corpus, id, target)?;
            match top_word(model, id, &us, &gold, cfg) {
                Ok(r) => Ok(Ok(r)),
                Err(Error::NoAttribution(_)) => Ok(Err(id.clone())),
                Err(e) => Err(e),
            }
        },
    );
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r? {
            Ok(rec) => records.push(rec),
            Err(id) => skipped.push(id),
        }
    }
    let abs: Vec<f64> = records
        .iter()
        .map(|r| r.completeness_residual.abs())
        .collect();
    Ok(AttributionBatch {
        config: *cfg,
        max_abs_residual: abs.iter().copied().fold(0.0, f64::max),
        mean_abs_residual: if abs.is_empty() {
            0.0
        } else {
            abs.iter().sum::<f64>() / abs.len() as f64
        },
        records,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ControlCorrect,
    OodCorrect,
    OodIncorrect,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::ControlCorrect,
        Condition::OodCorrect,
        Condition::OodIncorrect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::ControlCorrect => "control_correct",
            Condition::OodCorrect => "ood_correct",
            Condition::OodIncorrect => "ood_incorrect",
        }
    }

    /// Matrix row for a record; incorrect control predictions have none.
    pub fn of(from_control: bool, record: &AttributionRecord) -> Option<Condition> {
        match (from_control, record.correct()) {
            (true, true) => Some(Condition::ControlCorrect),
            (true, false) => None,
            (false, true) => Some(Condition::OodCorrect),
            (false, false) => Some(Condition::OodIncorrect),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCount {
    pub word: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub class: String,
    pub condition: Condition,
    pub words: Vec<WordCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub class: String,
    pub confused_with: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopWordMatrix {
    pub rows: Vec<MatrixRow>,
    /// Per gold class, the most frequent wrong prediction on the OOD split.
    pub confusions: Vec<Confusion>,
}

/// Ranks by descending count, ties by word.
fn ranked<K: Ord + Clone>(counts: &BTreeMap<K, u64>, depth: usize) -> Vec<(K, u64)> {
    let mut v: Vec<(K, u64)> = counts.iter().map(|(k, &c)| (k.clone(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(depth);
    v
}

/// Per gold class and condition, the most frequent top words.
pub fn build_matrix(records: &[(Condition, AttributionRecord)]) -> TopWordMatrix {
    let mut counts: BTreeMap<(String, Condition), BTreeMap<String, u64>> = BTreeMap::new();
    let mut wrong: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (cond, r) in records {
        for c in Condition::ALL {
            counts.entry((r.gold.clone(), c)).or_default();
        }
        *counts
            .get_mut(&(r.gold.clone(), *cond))
            .expect("entry inserted above")
            .entry(r.top_word.clone())
            .or_insert(0) += 1;
        if *cond == Condition::OodIncorrect {
            *wrong
                .entry(r.gold.clone())
                .or_default()
                .entry(r.predicted.clone())
                .or_insert(0) += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|((class, condition), words)| MatrixRow {
            class,
            condition,
            words: ranked(&words, MATRIX_DEPTH)
                .into_iter()
                .map(|(word, count)| WordCount { word, count })
                .collect(),
        })
        .collect();
    let confusions = wrong
        .into_iter()
        .filter_map(|(class, preds)| {
            ranked(&preds, 1)
                .pop()
                .map(|(confused_with, count)| Confusion {
                    class,
                    confused_with,
                    count,
                })
        })
        .collect();
    TopWordMatrix { rows, confusions }
}

impl TopWordMatrix {
    pub fn row(&self, class: &str, condition: Condition) -> Option<&MatrixRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.condition == condition)
    }

    /// Two tab-separated blocks: ranked words, then modal confusions.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tcondition\trank\tword\tcount\n");
        for r in &self.rows {
            for (rank, w) in r.words.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    r.class,
                    r.condition.name(),
                    rank + 1,
                    w.word,
                    w.count
                );
            }
        }
        out.push_str("\nclass\tconfused_with\tcount\n");
        for c in &self.confusions {
            let _ = writeln!(out, "{}\t{}\t{}", c.class, c.confused_with, c.count);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{TrainConfig, Vocab};
    use rand::{Rng, SeedableRng};

    fn hand_model() -> LinearModel {
        let vocab = Vocab::from_words(["coffee", "make", "me", "song"]);
        let mut m = LinearModel::zeros(
            vec!["iot".into(), "music".into()],
            vocab,
            TrainConfig::default(),
        );
        let coffee = m.vocab.index("coffee").unwrap();
        m.weights[coffee] = 2.0;
        m
    }

    fn random_model(seed: u64, classes: usize, dim: usize) -> (LinearModel, Features) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocab::from_words((0..dim).map(|i| format!("w{i:02}")));
        let mut m = LinearModel::zeros(
            (0..classes).map(|c| format!("c{c}")).collect(),
            vocab,
            TrainConfig::default(),
        );
        for w in m.weights.iter_mut().chain(m.biases.iter_mut()) {
            *w = r.gen_range(-0.5..0.5);
        }
        // five-token bag of words
        let mut x = vec![0.0; dim];
        for _ in 0..5 {
            x[r.gen_range(0..dim)] += 1.0;
        }
        (m, Features::from_dense(&x))
    }

    #[test]
    fn hand_built_model_picks_coffee() {
        let m = hand_model();
        let u = Utterance::new("u1", "make me coffee", "iot", "coffee", true, "p");
        let r = top_word(&m, "u1", &[&u], "iot", &AttributionConfig::default()).unwrap();
        assert_eq!(r.top_word, "coffee");
        assert_eq!(r.predicted, "iot");
        assert_eq!(
            r.attributions
                .iter()
                .map(|w| w.word.as_str())
                .collect::<Vec<_>>(),
            ["make", "me", "coffee"]
        );

        let single = Utterance::new("u2", "please song", "music", "play", true, "p");
        let r = top_word(&m, "u2", &[&single], "music", &AttributionConfig::default()).unwrap();
        assert_eq!(r.top_word, "song");

        let none = Utterance::new("u3", "nothing here", "music", "play", true, "p");
        assert!(matches!(
            top_word(&m, "u3", &[&none], "music", &AttributionConfig::default()),
            Err(Error::NoAttribution(_))
        ));
    }

    #[test]
    fn ties_go_to_the_earliest_token() {
        let m = hand_model();
        let u = Utterance::new("u", "me make", "iot", "x", true, "p");
        let cfg = AttributionConfig {
            output: AttributionOutput::Logit,
            ..Default::default()
        };
        assert_eq!(
            top_word(&m, "u", &[&u], "iot", &cfg).unwrap().top_word,
            "me"
        );
    }

    #[test]
    fn stopwords_can_be_top_words() {
        let vocab = Vocab::from_words(["the", "song"]);
        let mut m = LinearModel::zeros(vec!["a".into(), "b".into()], vocab, TrainConfig::default());
        m.weights[m.vocab.index("the").unwrap()] = 1.5;
        let u = Utterance::new("u", "the song", "a", "x", true, "p");
        assert_eq!(
            top_word(&m, "u", &[&u], "a", &AttributionConfig::default())
                .unwrap()
                .top_word,
            "the"
        );
    }

    #[test]
    fn logit_attributions_are_exact_products() {
        let (m, x) = random_model(1, 5, 20);
        for steps in [1, 7, 50, 300] {
            let cfg = AttributionConfig {
                steps,
                output: AttributionOutput::Logit,
                ..Default::default()
            };
            for c in 0..5 {
                for (i, a) in integrated_gradients(&m, &x, c, &cfg).unwrap() {
                    assert!((a - x.get(i) * m.weight(c, i)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_input_has_zero_attribution() {
        let (m, _) = random_model(2, 3, 6);
        let a =
            integrated_gradients_dense(&m, &[0.0; 6], 1, &AttributionConfig::default()).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        assert!(matches!(
            integrated_gradients_dense(&m, &[0.0; 5], 1, &AttributionConfig::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn softmax_completeness_tightens_with_steps() {
        let (m, x) = random_model(3, 5, 20);
        let res = |steps| {
            let cfg = AttributionConfig {
                steps,
                ..Default::default()
            };
            let a = integrated_gradients(&m, &x, 2, &cfg).unwrap();
            completeness_residual(&m, &x, 2, &a, AttributionOutput::Softmax).abs()
        };
        let (r75, r150, r300) = (res(75), res(150), res(300));
        assert!(r300 <= 1e-3, "{r300}");
        assert!(r150 < r75 && r300 < r150);
    }

    #[test]
    fn positive_scaling_keeps_top_word() {
        let (m, _) = random_model(4, 4, 10);
        let words: Vec<String> = m.vocab.words().to_vec();
        let u = Utterance::new("u", words[..6].join(" "), "c1", "x", true, "p");
        assert!(words.len() >= 6);
        let cfg = AttributionConfig {
            output: AttributionOutput::Logit,
            ..Default::default()
        };
        let base = top_word(&m, "u", &[&u], "c1", &cfg).unwrap();
        let mut scaled = m.clone();
        for w in scaled.weights.iter_mut().chain(scaled.biases.iter_mut()) {
            *w *= 3.7;
        }
        let r = top_word(&scaled, "u", &[&u], "c1", &cfg).unwrap();
        assert_eq!(r.top_word, base.top_word);
        assert_eq!(r.predicted, base.predicted);
    }

    fn rec(gold: &str, predicted: &str, top: &str) -> AttributionRecord {
        AttributionRecord {
            id: String::new(),
            predicted: predicted.into(),
            gold: gold.into(),
            attributions: vec![],
            top_word: top.into(),
            completeness_residual: 0.0,
        }
    }

    #[test]
    fn matrix_counts_ranks_and_confusions() {
        let mut records = vec![(Condition::ControlCorrect, rec("music", "music", "song")); 4];
        records.push((Condition::OodIncorrect, rec("music", "play", "the")));
        records.push((Condition::OodIncorrect, rec("music", "play", "a")));
        records.push((Condition::OodIncorrect, rec("music", "news", "a")));
        records.push((Condition::OodIncorrect, rec("music", "play", "zz")));
        records.push((Condition::OodIncorrect, rec("music", "play", "b")));
        let m = build_matrix(&records);
        assert_eq!(
            m.row("music", Condition::ControlCorrect).unwrap().words,
            vec![WordCount {
                word: "song".into(),
                count: 4
            }]
        );
        let words: Vec<&str> = m
            .row("music", Condition::OodIncorrect)
            .unwrap()
            .words
            .iter()
            .map(|w| w.word.as_str())
            .collect();
        assert_eq!(words, ["a", "b", "the"]);
        assert!(m
            .row("music", Condition::OodCorrect)
            .unwrap()
            .words
            .is_empty());
        assert_eq!(
            m.confusions,
            vec![Confusion {
                class: "music".into(),
                confused_with: "play".into(),
                count: 4
            }]
        );
        assert_eq!(build_matrix(&[]), TopWordMatrix::default());
        let tsv = m.to_tsv();
        assert!(tsv.starts_with(
            "class\tcondition\trank\tword\tcount\nmusic\tcontrol_correct\t1\tsong\t4\n"
        ));
        assert!(tsv.ends_with("\nclass\tconfused_with\tcount\nmusic\tplay\t4\n"));
    }

    #[test]
    fn batch_is_thread_invariant() {
        let c = crate::corpus::generate_fixture(&Default::default()).unwrap();
        let split = crate::splitters::random_base_split(&c, 0.1, 0.2, 0).unwrap();
        let m = crate::eval::train_classifier(
            &c,
            &split,
            &TrainConfig {
                epochs: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let ids: Vec<String> = split.test().iter().cloned().collect();
        let run = |n| {
            par::with_threads(n, || {
                attribute_members(
                    &m,
                    &c,
                    &ids,
                    Target::Scenario,
                    &AttributionConfig::default(),
                )
                .unwrap()
            })
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one.records.len() + one.skipped.len(), ids.len());
        assert!(one.max_abs_residual < 1e-2);
    }
}
