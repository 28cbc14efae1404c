use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use oodsplit_core::attribution::{
    attribute_members, build_matrix, AttributionBatch, AttributionConfig, AttributionOutput,
    AttributionTarget, Condition,
};
use oodsplit_core::corpus::{generate_fixture, parse_corpus, Corpus, FixtureConfig};
use oodsplit_core::eval::{
    evaluate, train_classifier, BootstrapConfig, Dataset, EvalReport, LinearModel, Loss, Target,
    TrainConfig,
};
use oodsplit_core::splitters::{
    achieved, make_cg_split, make_da_splits, make_mic_split, make_oov_split, random_base_split,
    DaConfig, DbcaConfig, OovConfig, Split, SplitKind, SplitPair,
};
use oodsplit_core::stats::{audit_split, emit_report, Alphas, ReportFormat};

use crate::args::*;
use crate::output::{OutDir, RunManifest};
use crate::CliError;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const OOD_DIR: &str = "ood";
pub const CONTROL_DIR: &str = "control";

fn config_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable config")
}

/// Corpus given explicitly, or recorded by the run that wrote `split_dir`
/// (its own manifest, or its parent's for `ood/` and `control/`).
fn resolve_corpus(explicit: &Option<PathBuf>, split_dir: &Path) -> Result<PathBuf, CliError> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    let candidates = [Some(split_dir), split_dir.parent()];
    for dir in candidates.into_iter().flatten() {
        if let Some(m) = RunManifest::read(dir) {
            if let Some(c) = m.inputs.get("corpus") {
                return Ok(PathBuf::from(c));
            }
        }
    }
    Err(CliError::Usage(format!(
        "no --corpus given and no manifest with a corpus input found for {}",
        split_dir.display()
    )))
}

fn load_model(dir: &Path) -> Result<LinearModel, CliError> {
    Ok(LinearModel::load(&dir.join(MODEL_FILE))?)
}

pub fn fixture(a: &FixtureArgs, force: bool) -> Result<(), CliError> {
    let cfg = FixtureConfig {
        n_scenarios: a.n_scenarios,
        actions_per_scenario: a.actions_per_scenario,
        samples_per_intent: a.samples_per_intent,
        vocab_words_per_label: a.vocab_words_per_label,
        stopword_rate: a.stopword_rate,
        headset_rate: a.headset_rate,
        n_speakers: a.n_speakers,
        seed: a.seed,
    };
    cfg.validate()?;
    let corpus = generate_fixture(&cfg)?;
    let mut out = OutDir::prepare(&a.out_dir, force)?;
    out.write(CORPUS_FILE, &corpus.to_jsonl())?;
    let mut m = RunManifest::new("fixture", Some(a.seed), config_json(&cfg));
    m.metrics = json!({
        "utterances": corpus.len(),
        "scenarios": corpus.scenarios().len(),
        "actions": corpus.actions().len(),
        "intents": corpus.intents().len(),
    });
    out.finish(m)
}

fn base_split(
    corpus: &Corpus,
    base: &BaseSplit,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<Split, CliError> {
    match &base.base_split_dir {
        Some(dir) => {
            manifest.input("base_split", dir);
            let s = Split::read_dir(dir)?;
            s.validate(corpus)?;
            Ok(s)
        }
        None => Ok(random_base_split(
            corpus,
            base.base_dev_fraction,
            base.base_test_fraction,
            seed,
        )?),
    }
}

fn split_meta(corpus: &Corpus, split: &Split) -> Result<Value, CliError> {
    let mut per_test = BTreeMap::new();
    for name in split.tests.keys() {
        per_test.insert(name.clone(), achieved(corpus, split, name)?);
    }
    let sizes: BTreeMap<&str, usize> = split
        .subsets()
        .into_iter()
        .map(|(n, s)| (n, s.len()))
        .collect();
    Ok(json!({ "sizes": sizes, "achieved": per_test }))
}

fn write_pair(
    corpus: &Corpus,
    pair: &SplitPair,
    common: &CommonSplit,
    force: bool,
    mut manifest: RunManifest,
) -> Result<(), CliError> {
    pair.validate(corpus)?;
    let mut out = OutDir::prepare(&common.out_dir, force)?;
    pair.ood.write_dir(&out.path(OOD_DIR))?;
    out.record(OOD_DIR);
    let mut meta = json!({ "kind": pair.kind, OOD_DIR: split_meta(corpus, &pair.ood)? });
    if let Some(control) = &pair.control {
        control.write_dir(&out.path(CONTROL_DIR))?;
        out.record(CONTROL_DIR);
        meta[CONTROL_DIR] = split_meta(corpus, control)?;
    }
    if !pair.pairs.is_empty() {
        out.write_json("pairs.json", &pair.pairs.values().collect::<Vec<_>>())?;
    }
    out.write_json("meta.json", &meta)?;
    manifest.input("corpus", &common.corpus);
    manifest.metrics = meta;
    out.finish(manifest)
}

pub fn split(cmd: &SplitCommand, force: bool, name: &str) -> Result<(), CliError> {
    match cmd {
        SplitCommand::Oov(a) => {
            let corpus = parse_corpus(&a.common.corpus)?;
            let cfg = OovConfig {
                test_intent_count: a.test_intents,
                min_samples_per_intent: a.min_samples,
                seed: a.common.seed,
            };
            let mut m = RunManifest::new(
                name,
                Some(a.common.seed),
                json!({ "oov": cfg, "base": base_json(&a.base) }),
            );
            let base = base_split(&corpus, &a.base, a.common.seed, &mut m)?;
            let pair = make_oov_split(&corpus, &base, &cfg)?;
            write_pair(&corpus, &pair, &a.common, force, m)
        }
        SplitCommand::Cg(a) => {
            let corpus = parse_corpus(&a.common.corpus)?;
            let cfg = DbcaConfig {
                target_compound_divergence: a.target_dc,
                atom_weight: a.beta,
                test_fraction: a.test_fraction,
                train_fraction: a.train_fraction,
                dev_fraction: a.dev_fraction,
                candidate_pool: a.pool,
                max_passes: a.max_passes,
                seed: a.common.seed,
            };
            cfg.validate()?;
            let m = RunManifest::new(name, Some(a.common.seed), config_json(&cfg));
            let pair = make_cg_split(&corpus, &cfg)?;
            write_pair(&corpus, &pair, &a.common, force, m)
        }
        SplitCommand::DaCg(a) => {
            let corpus = parse_corpus(&a.common.corpus)?;
            let cfg = DaConfig {
                train_pairs_per_scenario: a.train_pairs,
                dev_pairs_per_scenario: a.dev_pairs,
                test_pairs_per_scenario: a.test_pairs,
                scenarios: (!a.scenarios.is_empty()).then(|| a.scenarios.clone()),
                seed: a.common.seed,
            };
            let mut m = RunManifest::new(
                name,
                Some(a.common.seed),
                json!({ "da": cfg, "base": base_json(&a.base) }),
            );
            let base = base_split(&corpus, &a.base, a.common.seed, &mut m)?;
            let pair = make_da_splits(&corpus, &base, &cfg)?;
            write_pair(&corpus, &pair, &a.common, force, m)
        }
        SplitCommand::Mic(a) => {
            let corpus = parse_corpus(&a.common.corpus)?;
            let mut m = RunManifest::new(
                name,
                Some(a.common.seed),
                json!({ "base": base_json(&a.base) }),
            );
            let base = base_split(&corpus, &a.base, a.common.seed, &mut m)?;
            let pair = SplitPair {
                kind: SplitKind::Mic,
                ood: make_mic_split(&corpus, &base)?,
                control: None,
                pairs: BTreeMap::new(),
            };
            write_pair(&corpus, &pair, &a.common, force, m)
        }
    }
}

fn base_json(b: &BaseSplit) -> Value {
    match &b.base_split_dir {
        Some(d) => json!({ "dir": d.display().to_string() }),
        None => {
            json!({ "dev_fraction": b.base_dev_fraction, "test_fraction": b.base_test_fraction })
        }
    }
}

pub fn stats(a: &StatsArgs, force: bool) -> Result<(), CliError> {
    let corpus_path = resolve_corpus(&a.corpus, &a.split_dir)?;
    let corpus = parse_corpus(&corpus_path)?;
    let split = Split::read_dir(&a.split_dir)?;
    let alphas = Alphas {
        scenario: a.alpha_scenario,
        action: a.alpha_action,
        intent: a.alpha_intent,
    };
    let report = audit_split(&corpus, &split, &alphas)?;
    let tsv = emit_report(&report, ReportFormat::Tsv);
    let structured = emit_report(&report, ReportFormat::Structured);
    match &a.out_dir {
        None => print!(
            "{}",
            if a.format == StatsFormat::Tsv {
                &tsv
            } else {
                &structured
            }
        ),
        Some(dir) => {
            let mut out = OutDir::prepare(dir, force)?;
            out.write("report.tsv", &tsv)?;
            out.write("report.json", &structured)?;
            let mut m = RunManifest::new("stats", None, config_json(&alphas));
            m.input("corpus", &corpus_path);
            m.input("split", &a.split_dir);
            out.finish(m)?;
        }
    }
    Ok(())
}

pub fn train(a: &TrainArgs, force: bool) -> Result<(), CliError> {
    let corpus_path = resolve_corpus(&a.corpus, &a.split_dir)?;
    let corpus = parse_corpus(&corpus_path)?;
    let split = Split::read_dir(&a.split_dir)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        loss: match a.loss {
            LossArg::Ce => Loss::CrossEntropy,
            LossArg::Topk => Loss::Topk,
        },
        k: a.k,
        seed: a.seed,
        target: match a.target {
            TargetArg::Scenario => Target::Scenario,
            TargetArg::Intent => Target::Intent,
        },
    };
    cfg.validate()?;
    let model = train_classifier(&corpus, &split, &cfg)?;
    let mut out = OutDir::prepare(&a.out_dir, force)?;
    model.save(&out.path(MODEL_FILE))?;
    out.record(MODEL_FILE);
    let mut m = RunManifest::new("train", Some(a.seed), config_json(&cfg));
    m.input("corpus", &corpus_path);
    m.input("split", &a.split_dir);
    let best = model
        .history
        .iter()
        .find(|h| h.epoch == model.selected_epoch);
    m.metrics = json!({
        "classes": model.classes.len(),
        "vocab": model.vocab.len(),
        "selected_epoch": model.selected_epoch,
        "dev_micro_f1": best.and_then(|h| h.dev_micro_f1),
    });
    out.finish(m)
}

#[derive(Serialize)]
struct Run {
    model_dir: String,
    reports: Vec<EvalReport>,
}

#[derive(Serialize)]
struct Mean {
    subset: String,
    runs: usize,
    micro_f1: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn eval(a: &EvalArgs, force: bool) -> Result<(), CliError> {
    let corpus_path = resolve_corpus(&a.corpus, &a.split_dir)?;
    let corpus = parse_corpus(&corpus_path)?;
    let split = Split::read_dir(&a.split_dir)?;
    let boot = BootstrapConfig {
        n_bootstrap: a.bootstrap,
        level: a.level,
        seed: a.seed,
    };
    let mut runs = Vec::new();
    for dir in &a.model_dirs {
        let model = load_model(dir)?;
        let mut reports = Vec::new();
        for (name, ids) in &split.tests {
            let data = Dataset::build(&corpus, ids, &model.vocab, model.config.target)?;
            reports.push(evaluate(&model, &data, name, &boot)?);
        }
        runs.push(Run {
            model_dir: dir.display().to_string(),
            reports,
        });
    }
    let n = runs.len() as f64;
    let means: Vec<Mean> = split
        .tests
        .keys()
        .enumerate()
        .map(|(i, name)| {
            let avg =
                |f: fn(&EvalReport) -> f64| runs.iter().map(|r| f(&r.reports[i])).sum::<f64>() / n;
            Mean {
                subset: name.clone(),
                runs: runs.len(),
                micro_f1: avg(|r| r.micro_f1),
                ci_low: avg(|r| r.ci_low),
                ci_high: avg(|r| r.ci_high),
            }
        })
        .collect();
    for mean in &means {
        println!(
            "{}\tmicro_f1={:.4}\tci=[{:.4}, {:.4}]\truns={}",
            mean.subset, mean.micro_f1, mean.ci_low, mean.ci_high, mean.runs
        );
    }
    let mut out = OutDir::prepare(&a.out_dir, force)?;
    out.write_json("eval.json", &json!({ "runs": runs, "mean": means }))?;
    let mut m = RunManifest::new(
        "eval",
        Some(a.seed),
        json!({ "n_bootstrap": a.bootstrap, "level": a.level }),
    );
    m.input("corpus", &corpus_path);
    m.input("split", &a.split_dir);
    for (i, d) in a.model_dirs.iter().enumerate() {
        m.input(&format!("model_{i}"), d);
    }
    m.metrics = serde_json::to_value(&means).expect("serialisable");
    out.finish(m)
}

fn attribute_split(
    corpus: &Corpus,
    model: &LinearModel,
    split_dir: &Path,
    cfg: &AttributionConfig,
) -> Result<AttributionBatch, CliError> {
    let split = Split::read_dir(split_dir)?;
    let ids: Vec<String> = split.tests.values().flatten().cloned().collect();
    Ok(attribute_members(
        model,
        corpus,
        &ids,
        model.config.target,
        cfg,
    )?)
}

pub fn attribute(a: &AttributeArgs, force: bool) -> Result<(), CliError> {
    let corpus_path = resolve_corpus(&a.corpus, &a.split_dir)?;
    let corpus = parse_corpus(&corpus_path)?;
    let cfg = AttributionConfig {
        steps: a.steps,
        target: match a.target {
            AttrTargetArg::Predicted => AttributionTarget::Predicted,
            AttrTargetArg::True => AttributionTarget::True,
        },
        output: match a.output {
            AttrOutputArg::Logit => AttributionOutput::Logit,
            AttrOutputArg::Softmax => AttributionOutput::Softmax,
        },
    };
    cfg.validate()?;
    let ood = attribute_split(&corpus, &load_model(&a.model_dir)?, &a.split_dir, &cfg)?;
    let control = match (&a.control_model_dir, &a.control_split_dir) {
        (Some(md), Some(sd)) => Some(attribute_split(&corpus, &load_model(md)?, sd, &cfg)?),
        _ => None,
    };
    let mut tagged = Vec::new();
    for (from_control, batch) in [(true, control.as_ref()), (false, Some(&ood))] {
        for r in batch.into_iter().flat_map(|b| &b.records) {
            if let Some(c) = Condition::of(from_control, r) {
                tagged.push((c, r.clone()));
            }
        }
    }
    let matrix = build_matrix(&tagged);

    let mut out = OutDir::prepare(&a.out_dir, force)?;
    out.write_json("records.json", &json!({ "ood": ood, "control": control }))?;
    out.write_json("matrix.json", &matrix)?;
    out.write("matrix.tsv", &matrix.to_tsv())?;
    let mut m = RunManifest::new("attribute", None, config_json(&cfg));
    m.input("corpus", &corpus_path);
    m.input("model", &a.model_dir);
    m.input("split", &a.split_dir);
    if let (Some(md), Some(sd)) = (&a.control_model_dir, &a.control_split_dir) {
        m.input("control_model", md);
        m.input("control_split", sd);
    }
    let summary = |b: &AttributionBatch| {
        json!({
            "records": b.records.len(),
            "skipped": b.skipped.len(),
            "max_abs_completeness_residual": b.max_abs_residual,
            "mean_abs_completeness_residual": b.mean_abs_residual,
        })
    };
    m.metrics = json!({ "ood": summary(&ood), "control": control.as_ref().map(summary) });
    out.finish(m)
}
