//! Desk-scale evaluation: bag-of-words softmax regression trained with
//! mini-batch gradient descent (plain or TOPK loss), micro-F1 and percentile
//! bootstrap confidence intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelKind, Utterance};
use crate::splitters::{members, Split};
use crate::{par, rng, Error, Result};

pub const MODEL_FORMAT: &str = "oodsplit-linear-model";
pub const MODEL_VERSION: u32 = 1;

/// Word index built from training utterances only; words sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        Vocab::from(set.into_iter().collect::<Vec<_>>())
    }

    pub fn from_utterances<'a, I>(utterances: I) -> Self
    where
        I: IntoIterator<Item = &'a Utterance>,
    {
        Vocab::from_words(
            utterances
                .into_iter()
                .flat_map(|u| u.tokens.iter().cloned()),
        )
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Sparse feature vector, sorted by index, no explicit zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Features(pub Vec<(usize, f64)>);

impl Features {
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for &(i, x) in &self.0 {
            v[i] = x;
        }
        v
    }

    pub fn from_dense(v: &[f64]) -> Self {
        Features(
            v.iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, &x)| (i, x))
                .collect(),
        )
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0
            .binary_search_by_key(&i, |e| e.0)
            .map_or(0.0, |p| self.0[p].1)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }
}

/// Word counts of one utterance, or the element-wise mean over a pair.
pub fn featurize(utterances: &[&Utterance], vocab: &Vocab) -> Features {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for u in utterances {
        for t in &u.tokens {
            if let Some(i) = vocab.index(t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
    }
    let n = utterances.len().max(1) as f64;
    Features(counts.into_iter().map(|(i, c)| (i, c / n)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Scenario,
    Intent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial step size; epoch `e` (1-based) uses `learning_rate / sqrt(e)`.
    pub learning_rate: f64,
    pub loss: Loss,
    pub k: usize,
    pub seed: u64,
    pub target: Target,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 10,
            learning_rate: 0.1,
            loss: Loss::CrossEntropy,
            k: 2,
            seed: 0,
            target: Target::Scenario,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.k == 0 {
            return Err(Error::Domain(
                "epochs, batch_size and k must be at least 1".into(),
            ));
        }
        if self.k > self.batch_size {
            return Err(Error::Domain(format!(
                "k = {} exceeds batch_size = {}",
                self.k, self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Class label of a split member. Pairs share a scenario and only support
/// scenario targets.
pub fn member_label(corpus: &Corpus, key: &str, target: Target) -> Result<String> {
    let us = members(corpus, key)?;
    match (target, us.as_slice()) {
        (Target::Scenario, [u, ..]) => Ok(u.label(LabelKind::Scenario).to_owned()),
        (Target::Intent, [u]) => Ok(u.label(LabelKind::Intent).to_owned()),
        _ => Err(Error::Domain(format!(
            "member `{key}`: double-action members only support scenario targets"
        ))),
    }
}

/// Featurised members with their gold labels, in member order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: Vec<Features>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn build<'i, I>(corpus: &Corpus, ids: I, vocab: &Vocab, target: Target) -> Result<Dataset>
    where
        I: IntoIterator<Item = &'i String>,
    {
        let mut d = Dataset::default();
        for id in ids {
            let us = members(corpus, id)?;
            d.labels.push(member_label(corpus, id, target)?);
            d.features.push(featurize(&us, vocab));
            d.ids.push(id.clone());
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub mean_batch_loss: f64,
    /// `None` when the split has no dev subset.
    pub dev_micro_f1: Option<f64>,
}

/// Multinomial logistic regression over a bag-of-words vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub format: String,
    pub version: u32,
    pub classes: Vec<String>,
    pub vocab: Vocab,
    /// Row-major `classes × vocab`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub config: TrainConfig,
    pub selected_epoch: usize,
    pub history: Vec<EpochStat>,
}

impl LinearModel {
    pub fn zeros(classes: Vec<String>, vocab: Vocab, config: TrainConfig) -> Self {
        let (c, d) = (classes.len(), vocab.len());
        LinearModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            classes,
            vocab,
            weights: vec![0.0; c * d],
            biases: vec![0.0; c],
            config,
            selected_epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.dim() + feature]
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn logits(&self, x: &Features) -> Vec<f64> {
        let d = self.dim();
        (0..self.n_classes())
            .map(|c| {
                let row = &self.weights[c * d..(c + 1) * d];
                self.biases[c] + x.0.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn logits_dense(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.n_classes())
            .map(|c| {
                let row = &self.weights[c * d..(c + 1) * d];
                self.biases[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &Features) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Argmax class; ties go to the lower index.
    pub fn predict(&self, x: &Features) -> usize {
        argmax(&self.logits(x))
    }

    pub fn predict_labels(&self, features: &[Features]) -> Vec<String> {
        par::map(features, |x| self.classes[self.predict(x)].clone())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self
            .weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Domain(
                "model parameters diverged to non-finite values".into(),
            ))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<LinearModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: LinearModel = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        let (c, d) = (m.classes.len(), m.vocab.len());
        if m.weights.len() != c * d || m.biases.len() != c {
            return Err(Error::Format(format!(
                "{}: parameter shapes do not match classes × vocab",
                path.display()
            )));
        }
        Ok(m)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean of the `k` largest values, summed in input order.
pub fn topk_batch_loss(losses: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > losses.len() {
        return Err(Error::Domain(format!(
            "k = {k} outside 1..={}",
            losses.len()
        )));
    }
    Ok(topk_indices(losses, k)
        .iter()
        .map(|&i| losses[i])
        .sum::<f64>()
        / k as f64)
}

/// Indices of the `k` highest losses, returned in ascending index order.
fn topk_indices(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Dense gradient of a batch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Per-sample logit gradients `(p - onehot) / k` for the samples that enter
/// the batch objective, and the objective itself.
fn batch_terms(
    model: &LinearModel,
    xs: &[&Features],
    ys: &[usize],
    loss: Loss,
    k: usize,
) -> (f64, Vec<(usize, Vec<f64>)>) {
    let logits: Vec<Vec<f64>> = xs.iter().map(|x| model.logits(x)).collect();
    let losses: Vec<f64> = logits
        .iter()
        .zip(ys)
        .map(|(z, &y)| log_sum_exp(z) - z[y])
        .collect();
    let selected: Vec<usize> = match loss {
        Loss::CrossEntropy => (0..xs.len()).collect(),
        Loss::Topk => topk_indices(&losses, k.min(xs.len())),
    };
    let n = selected.len() as f64;
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(selected.len());
    for &i in &selected {
        total += losses[i];
        let mut g = softmax(&logits[i]);
        g[ys[i]] -= 1.0;
        for v in &mut g {
            *v /= n;
        }
        terms.push((i, g));
    }
    (total / n, terms)
}

/// Batch objective and its gradient with respect to weights and biases.
pub fn batch_loss_and_gradient(
    model: &LinearModel,
    xs: &[&Features],
    ys: &[usize],
    loss: Loss,
    k: usize,
) -> Result<(f64, Gradient)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Domain(
            "batch must be nonempty with one label per sample".into(),
        ));
    }
    if loss == Loss::Topk && k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let (value, terms) = batch_terms(model, xs, ys, loss, k);
    let d = model.dim();
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        biases: vec![0.0; model.biases.len()],
    };
    for (i, g) in terms {
        for (c, &gc) in g.iter().enumerate() {
            grad.biases[c] += gc;
            for &(j, x) in &xs[i].0 {
                grad.weights[c * d + j] += gc * x;
            }
        }
    }
    Ok((value, grad))
}

/// One gradient step in place; returns the batch objective.
fn step(
    model: &mut LinearModel,
    xs: &[&Features],
    ys: &[usize],
    loss: Loss,
    k: usize,
    lr: f64,
) -> f64 {
    let (value, terms) = batch_terms(model, xs, ys, loss, k);
    let d = model.dim();
    for (i, g) in terms {
        for (c, &gc) in g.iter().enumerate() {
            model.biases[c] -= lr * gc;
            let row = &mut model.weights[c * d..(c + 1) * d];
            for &(j, x) in &xs[i].0 {
                row[j] -= lr * gc * x;
            }
        }
    }
    value
}

/// Trains on `split.train`, picking the epoch with the best dev micro-F1.
pub fn train_classifier(corpus: &Corpus, split: &Split, cfg: &TrainConfig) -> Result<LinearModel> {
    cfg.validate()?;
    let mut train_utts = Vec::new();
    for id in &split.train {
        train_utts.extend(members(corpus, id)?);
    }
    let vocab = Vocab::from_utterances(train_utts.iter().copied());
    let train = Dataset::build(corpus, &split.train, &vocab, cfg.target)?;
    let dev = Dataset::build(corpus, &split.dev, &vocab, cfg.target)?;
    train_on(train, dev, vocab, cfg)
}

/// Trains on prepared datasets; `vocab` must be the one they were built with.
pub fn train_on(
    train: Dataset,
    dev: Dataset,
    vocab: Vocab,
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    cfg.validate()?;
    let classes: Vec<String> = train
        .labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateTask(format!(
            "training subset has {} class(es); at least 2 are needed",
            classes.len()
        )));
    }
    let mut model = LinearModel::zeros(classes, vocab, cfg.clone());
    let ys: Vec<usize> = train
        .labels
        .iter()
        .map(|l| model.class_index(l).expect("class drawn from train labels"))
        .collect();

    let mut rng = rng::stream(cfg.seed, "train-shuffle");
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate / (epoch as f64).sqrt();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&Features> = chunk.iter().map(|&i| &train.features[i]).collect();
            let yb: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            loss_sum += step(&mut model, &xs, &yb, cfg.loss, cfg.k, lr);
            batches += 1;
        }
        model.check_finite()?;
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(micro_f1(&model.predict_labels(&dev.features), &dev.labels)?)
        };
        history.push(EpochStat {
            epoch,
            mean_batch_loss: loss_sum / batches.max(1) as f64,
            dev_micro_f1: dev_f1,
        });
        let score = dev_f1.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((s, ..)) => dev_f1.is_none() || score > *s,
        };
        if better {
            best = Some((score, model.weights.clone(), model.biases.clone(), epoch));
        }
    }
    if let Some((_, w, b, e)) = best {
        model.weights = w;
        model.biases = b;
        model.selected_epoch = e;
    }
    model.history = history;
    Ok(model)
}

/// Micro-averaged F1 over single-label predictions.
pub fn micro_f1<S: PartialEq>(predictions: &[S], golds: &[S]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Domain(format!(
            "{} predictions against {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Domain("micro-F1 of an empty prediction list".into()));
    }
    let tp = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    // each wrong prediction is one false positive and one false negative
    let wrong = predictions.len() - tp;
    Ok((2 * tp) as f64 / (2 * tp + 2 * wrong) as f64)
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile-bootstrap interval for micro-F1.
pub fn bootstrap_ci<S: PartialEq>(
    predictions: &[S],
    golds: &[S],
    n_bootstrap: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    micro_f1(predictions, golds)?;
    if n_bootstrap < 100 {
        return Err(Error::Domain(format!(
            "n_bootstrap must be at least 100, got {n_bootstrap}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let correct: Vec<bool> = predictions.iter().zip(golds).map(|(p, g)| p == g).collect();
    let n = correct.len();
    let mut stats = par::map_range(n_bootstrap, |r| {
        let mut rng = rng::replicate(seed, "bootstrap", r as u64);
        let hits = (0..n).filter(|_| correct[rng.gen_range(0..n)]).count();
        (2 * hits) as f64 / (2 * n) as f64
    });
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&stats, tail), percentile(&stats, 1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset: String,
    pub n: usize,
    pub micro_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_bootstrap: usize,
    /// Row = gold, column = predicted, over `classes`.
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_bootstrap: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

pub fn evaluate(
    model: &LinearModel,
    data: &Dataset,
    subset: &str,
    boot: &BootstrapConfig,
) -> Result<EvalReport> {
    let preds = model.predict_labels(&data.features);
    let f1 = micro_f1(&preds, &data.labels)?;
    let (ci_low, ci_high) = bootstrap_ci(
        &preds,
        &data.labels,
        boot.n_bootstrap,
        boot.level,
        boot.seed,
    )?;
    let mut classes: BTreeSet<String> = model.classes.iter().cloned().collect();
    classes.extend(data.labels.iter().cloned());
    let classes: Vec<String> = classes.into_iter().collect();
    let pos = |l: &str| {
        classes
            .binary_search_by(|c| c.as_str().cmp(l))
            .expect("label in class list")
    };
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    for (p, g) in preds.iter().zip(&data.labels) {
        confusion[pos(g)][pos(p)] += 1;
    }
    Ok(EvalReport {
        subset: subset.to_owned(),
        n: data.len(),
        micro_f1: f1,
        ci_low,
        ci_high,
        level: boot.level,
        n_bootstrap: boot.n_bootstrap,
        classes,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_fixture, FixtureConfig};
    use crate::splitters::random_base_split;
    use rand::SeedableRng;

    fn utt(id: &str, text: &str, scenario: &str, action: &str) -> Utterance {
        Utterance::new(id, text, scenario, action, true, "p")
    }

    #[test]
    fn featurize_counts_and_drops_unknown_words() {
        let vocab = Vocab::from_words(["play", "song"]);
        let u = utt("a", "play the song", "music", "play");
        assert_eq!(featurize(&[&u], &vocab).to_dense(2), vec![1.0, 1.0]);
        assert_eq!(featurize(&[&u, &u], &vocab), featurize(&[&u], &vocab));
        let v = utt("b", "nothing known", "music", "play");
        assert!(featurize(&[&v], &vocab).is_zero());
        let w = utt("c", "song song", "music", "play");
        assert_eq!(featurize(&[&u, &w], &vocab).to_dense(2), vec![0.5, 1.5]);
    }

    #[test]
    fn topk_loss_examples() {
        let l = [0.1, 0.9, 0.4, 0.7];
        assert_eq!(topk_batch_loss(&l, 2).unwrap(), 0.8);
        assert_eq!(topk_batch_loss(&l, 1).unwrap(), 0.9);
        assert_eq!(topk_batch_loss(&l, 4).unwrap(), l.iter().sum::<f64>() / 4.0);
        assert_eq!(topk_batch_loss(&[0.5, 0.5, 0.1], 2).unwrap(), 0.5);
        assert!(matches!(topk_batch_loss(&l, 0), Err(Error::Domain(_))));
        assert!(matches!(topk_batch_loss(&l, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn micro_f1_examples() {
        assert!((micro_f1(&["a", "b", "a"], &["a", "a", "a"]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(micro_f1(&["x", "y"], &["x", "y"]).unwrap(), 1.0);
        assert!(matches!(
            micro_f1(&["a"], &["a", "b"]),
            Err(Error::Domain(_))
        ));
    }

    fn setup(n_scenarios: usize, actions: usize) -> (Corpus, Split) {
        let c = generate_fixture(&FixtureConfig {
            n_scenarios,
            actions_per_scenario: actions,
            samples_per_intent: 30,
            ..FixtureConfig::default()
        })
        .unwrap();
        let base = random_base_split(&c, 0.1, 0.2, 0).unwrap();
        (c, base)
    }

    #[test]
    fn separable_fixture_is_learned() {
        let (c, split) = setup(2, 1);
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let m = train_classifier(&c, &split, &cfg).unwrap();
        let train = Dataset::build(&c, &split.train, &m.vocab, cfg.target).unwrap();
        let f1 = micro_f1(&m.predict_labels(&train.features), &train.labels).unwrap();
        assert!(f1 >= 0.99, "{f1}");
    }

    #[test]
    fn training_is_deterministic_and_topk_with_full_k_matches_ce() {
        let (c, split) = setup(3, 2);
        let ce = TrainConfig {
            epochs: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_classifier(&c, &split, &ce).unwrap();
        let b = train_classifier(&c, &split, &ce).unwrap();
        assert_eq!(a, b);
        let topk = TrainConfig {
            loss: Loss::Topk,
            k: ce.batch_size,
            ..ce.clone()
        };
        let t = train_classifier(&c, &split, &topk).unwrap();
        assert_eq!(t.weights, a.weights);
        assert_eq!(t.biases, a.biases);
        assert_eq!(t.history, a.history);
        let k2 = TrainConfig { k: 2, ..topk };
        assert_ne!(
            train_classifier(&c, &split, &k2).unwrap().weights,
            a.weights
        );
    }

    #[test]
    fn single_class_is_degenerate() {
        let (c, _) = setup(1, 1);
        let ids = c.iter().map(|u| u.id.clone()).collect();
        let split = Split::new(ids, Default::default(), Default::default());
        assert!(matches!(
            train_classifier(&c, &split, &TrainConfig::default()),
            Err(Error::DegenerateTask(_))
        ));
    }

    #[test]
    fn test_only_words_never_affect_training() {
        let (c, split) = setup(2, 2);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let before = train_classifier(&c, &split, &cfg).unwrap();
        let test_ids = split.test();
        let mut changed = 0;
        let edited: Vec<Utterance> = c
            .iter()
            .map(|u| {
                if test_ids.contains(&u.id) {
                    changed += 1;
                    let text = format!("{} zzzonlyintest", u.transcript);
                    let mut v = utt(&u.id, &text, &u.scenario, &u.action);
                    v.headset = u.headset;
                    v.speaker = u.speaker.clone();
                    v
                } else {
                    u.clone()
                }
            })
            .collect();
        assert!(changed > 0);
        let c2 = Corpus::new(edited).unwrap();
        let after = train_classifier(&c2, &split, &cfg).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let vocab = Vocab::from_words((0..6).map(|i| format!("w{i}")));
        let mut m = LinearModel::zeros(
            vec!["a".into(), "b".into(), "c".into()],
            vocab,
            TrainConfig::default(),
        );
        for w in m.weights.iter_mut().chain(m.biases.iter_mut()) {
            *w = r.gen_range(-1.0..1.0);
        }
        let xs: Vec<Features> = (0..5)
            .map(|_| {
                Features::from_dense(&(0..6).map(|_| r.gen_range(0.0..2.0)).collect::<Vec<_>>())
            })
            .collect();
        let xr: Vec<&Features> = xs.iter().collect();
        let ys = [0, 1, 2, 1, 0];
        for loss in [Loss::CrossEntropy, Loss::Topk] {
            let (_, g) = batch_loss_and_gradient(&m, &xr, &ys, loss, 2).unwrap();
            let h = 1e-6;
            for i in 0..m.weights.len() {
                let mut p = m.clone();
                p.weights[i] += h;
                let mut q = m.clone();
                q.weights[i] -= h;
                let fp = batch_loss_and_gradient(&p, &xr, &ys, loss, 2).unwrap().0;
                let fq = batch_loss_and_gradient(&q, &xr, &ys, loss, 2).unwrap().0;
                let num = (fp - fq) / (2.0 * h);
                assert!(
                    (num - g.weights[i]).abs() <= 1e-6 * g.weights[i].abs().max(1e-3),
                    "{loss:?} {i}"
                );
            }
        }
    }

    #[test]
    fn bootstrap_contract() {
        let golds: Vec<u8> = (0..200).map(|i| (i % 3) as u8).collect();
        assert_eq!(
            bootstrap_ci(&golds, &golds, 200, 0.95, 1).unwrap(),
            (1.0, 1.0)
        );
        let mut preds = golds.clone();
        for p in preds.iter_mut().step_by(4) {
            *p = 9;
        }
        let a = bootstrap_ci(&preds, &golds, 500, 0.95, 3).unwrap();
        assert_eq!(a, bootstrap_ci(&preds, &golds, 500, 0.95, 3).unwrap());
        let f1 = micro_f1(&preds, &golds).unwrap();
        assert!(a.0 <= f1 && f1 <= a.1, "{a:?} {f1}");
        assert!(matches!(
            bootstrap_ci(&preds, &golds, 99, 0.95, 3),
            Err(Error::Domain(_))
        ));
        let one = par::with_threads(1, || bootstrap_ci(&preds, &golds, 300, 0.9, 4).unwrap());
        let four = par::with_threads(4, || bootstrap_ci(&preds, &golds, 300, 0.9, 4).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn model_file_round_trip() {
        let (c, split) = setup(2, 2);
        let m = train_classifier(
            &c,
            &split,
            &TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(LinearModel::load(&path).unwrap(), m);
    }

    #[test]
    fn evaluation_report_counts() {
        let (c, split) = setup(2, 2);
        let m = train_classifier(
            &c,
            &split,
            &TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let test = Dataset::build(&c, split.test(), &m.vocab, Target::Scenario).unwrap();
        let r = evaluate(&m, &test, "test", &BootstrapConfig::default()).unwrap();
        let total: u64 = r.confusion.iter().flatten().sum();
        let diag: u64 = (0..r.classes.len()).map(|i| r.confusion[i][i]).sum();
        assert_eq!(total as usize, r.n);
        assert_eq!(diag as f64 / total as f64, r.micro_f1);
        assert!(r.ci_low <= r.micro_f1 && r.micro_f1 <= r.ci_high);
    }
}
