//! Labelled utterance corpora.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id":"u1","transcript":"wake me up at seven","scenario":"alarm","action":"set","headset":true,"speaker":"spk3"}
//! ```
//!
//! `audio_ref` is optional and never opened. Any other keys are carried along
//! untouched and written back on serialisation. The intent label is always
//! derived as `scenario_action` and never read from the file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rng;
use crate::{Error, Result};

/// Separator between scenario and action in an intent label.
pub const INTENT_SEPARATOR: char = '_';

/// Builds the intent label for a scenario/action pair.
pub fn intent_label(scenario: &str, action: &str) -> String {
    format!("{scenario}{INTENT_SEPARATOR}{action}")
}

/// Splits an intent label back into `(scenario, action)`.
///
/// Scenario labels never contain the separator (enforced on ingestion), so the
/// first separator is the boundary; actions such as `volume_up` survive intact.
pub fn split_intent(intent: &str) -> Option<(&str, &str)> {
    intent.split_once(INTENT_SEPARATOR)
}

/// Lowercases, splits on whitespace and strips punctuation from token edges.
pub fn tokenize(transcript: &str) -> Vec<String> {
    transcript
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Which label of an utterance a consumer looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Scenario,
    Action,
    Intent,
}

impl LabelKind {
    pub const ALL: [LabelKind; 3] = [LabelKind::Scenario, LabelKind::Action, LabelKind::Intent];

    pub fn name(self) -> &'static str {
        match self {
            LabelKind::Scenario => "scenario",
            LabelKind::Action => "action",
            LabelKind::Intent => "intent",
        }
    }
}

/// One recording with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub transcript: String,
    pub tokens: Vec<String>,
    pub scenario: String,
    pub action: String,
    pub intent: String,
    pub headset: bool,
    pub speaker: String,
    pub audio_ref: Option<String>,
    /// Unrecognised record fields, preserved verbatim.
    pub extra: BTreeMap<String, Value>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        transcript: impl Into<String>,
        scenario: impl Into<String>,
        action: impl Into<String>,
        headset: bool,
        speaker: impl Into<String>,
    ) -> Self {
        let transcript = transcript.into();
        let scenario = scenario.into();
        let action = action.into();
        Utterance {
            id: id.into(),
            tokens: tokenize(&transcript),
            intent: intent_label(&scenario, &action),
            transcript,
            scenario,
            action,
            headset,
            speaker: speaker.into(),
            audio_ref: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn label(&self, kind: LabelKind) -> &str {
        match kind {
            LabelKind::Scenario => &self.scenario,
            LabelKind::Action => &self.action,
            LabelKind::Intent => &self.intent,
        }
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    transcript: &'a str,
    scenario: &'a str,
    action: &'a str,
    headset: bool,
    speaker: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio_ref: Option<&'a str>,
    #[serde(flatten)]
    extra: &'a BTreeMap<String, Value>,
}

/// An id-indexed, immutable collection of utterances.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    index: HashMap<String, usize>,
    scenarios: BTreeSet<String>,
    actions: BTreeSet<String>,
    intents: BTreeSet<String>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.utterances == other.utterances
    }
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut index = HashMap::with_capacity(utterances.len());
        let mut scenarios = BTreeSet::new();
        let mut actions = BTreeSet::new();
        let mut intents = BTreeSet::new();
        for (i, u) in utterances.iter().enumerate() {
            if index.insert(u.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate utterance id `{}`",
                    u.id
                )));
            }
            if u.tokens.is_empty() {
                return Err(Error::Integrity(format!(
                    "utterance `{}` has no tokens",
                    u.id
                )));
            }
            scenarios.insert(u.scenario.clone());
            actions.insert(u.action.clone());
            intents.insert(u.intent.clone());
        }
        Ok(Corpus {
            utterances,
            index,
            scenarios,
            actions,
            intents,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.index.get(id).map(|&i| &self.utterances[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Looks up an id, failing with an integrity error when it is unknown.
    pub fn require(&self, id: &str) -> Result<&Utterance> {
        self.get(id)
            .ok_or_else(|| Error::Integrity(format!("unknown utterance id `{id}`")))
    }

    pub fn scenarios(&self) -> &BTreeSet<String> {
        &self.scenarios
    }

    pub fn actions(&self) -> &BTreeSet<String> {
        &self.actions
    }

    pub fn intents(&self) -> &BTreeSet<String> {
        &self.intents
    }

    pub fn labels(&self, kind: LabelKind) -> &BTreeSet<String> {
        match kind {
            LabelKind::Scenario => &self.scenarios,
            LabelKind::Action => &self.actions,
            LabelKind::Intent => &self.intents,
        }
    }

    /// Utterances whose headset flag equals `headset`.
    pub fn filter_headset(&self, headset: bool) -> Corpus {
        self.filter(|u| u.headset == headset)
    }

    pub fn filter<F: Fn(&Utterance) -> bool>(&self, keep: F) -> Corpus {
        let kept = self
            .utterances
            .iter()
            .filter(|u| keep(u))
            .cloned()
            .collect();
        Corpus::new(kept).expect("a subset of a valid corpus is valid")
    }

    pub fn parse_str(text: &str) -> Result<Corpus> {
        let mut utterances = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let u = parse_record(line, line_no)?;
            if let Some(first) = seen.insert(u.id.clone(), line_no) {
                return Err(Error::Integrity(format!(
                    "line {line_no}: duplicate utterance id `{}` (first seen on line {first})",
                    u.id
                )));
            }
            utterances.push(u);
        }
        Corpus::new(utterances)
    }

    /// Serialises to the line-delimited record format, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            let rec = RecordOut {
                id: &u.id,
                transcript: &u.transcript,
                scenario: &u.scenario,
                action: &u.action,
                headset: u.headset,
                speaker: &u.speaker,
                audio_ref: u.audio_ref.as_deref(),
                extra: &u.extra,
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialise"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a corpus file.
pub fn parse_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::parse_str(&text)
}

fn parse_record(line: &str, line_no: usize) -> Result<Utterance> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let Value::Object(mut map) = value else {
        return Err(Error::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        });
    };
    let schema = |field: &str| Error::Schema {
        line: line_no,
        field: field.to_owned(),
    };
    let mut take_str = |field: &str| -> Result<String> {
        match map.remove(field) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s),
            _ => Err(schema(field)),
        }
    };
    let id = take_str("id")?;
    let transcript = take_str("transcript")?;
    let scenario = take_str("scenario")?;
    let action = take_str("action")?;
    let speaker = take_str("speaker")?;
    if scenario.contains(INTENT_SEPARATOR) {
        return Err(schema("scenario"));
    }
    let headset = match map.remove("headset") {
        Some(Value::Bool(b)) => b,
        _ => return Err(schema("headset")),
    };
    let audio_ref = match map.remove("audio_ref") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(schema("audio_ref")),
    };
    let mut u = Utterance::new(id, transcript, scenario, action, headset, speaker);
    if u.tokens.is_empty() {
        return Err(schema("transcript"));
    }
    u.audio_ref = audio_ref;
    u.extra = map.into_iter().collect();
    Ok(u)
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub n_scenarios: usize,
    pub actions_per_scenario: usize,
    pub samples_per_intent: usize,
    pub vocab_words_per_label: usize,
    pub stopword_rate: f64,
    pub headset_rate: f64,
    pub n_speakers: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_scenarios: 4,
            actions_per_scenario: 4,
            samples_per_intent: 40,
            vocab_words_per_label: 4,
            stopword_rate: 0.3,
            headset_rate: 0.5,
            n_speakers: 8,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_scenarios", self.n_scenarios),
            ("actions_per_scenario", self.actions_per_scenario),
            ("samples_per_intent", self.samples_per_intent),
            ("vocab_words_per_label", self.vocab_words_per_label),
            ("n_speakers", self.n_speakers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Domain(format!("{name} must be at least 1")));
            }
        }
        for (name, r) in [
            ("stopword_rate", self.stopword_rate),
            ("headset_rate", self.headset_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// Function words mixed into fixture utterances.
pub const FIXTURE_STOPWORDS: [&str; 10] = [
    "a", "the", "to", "me", "my", "please", "of", "for", "what", "is",
];

/// Deterministic synthetic corpus.
///
/// Scenario `s{i}` carries actions `a0..a{k-1}`, so action labels are shared
/// across scenarios. Each intent owns `vocab_words_per_label` signature words
/// (`s{i}a{j}w{t}`) used nowhere else; stopwords are shared by all intents.
pub fn generate_fixture(cfg: &FixtureConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "fixture");
    let mut utterances =
        Vec::with_capacity(cfg.n_scenarios * cfg.actions_per_scenario * cfg.samples_per_intent);
    for s in 0..cfg.n_scenarios {
        for a in 0..cfg.actions_per_scenario {
            let words: Vec<String> = (0..cfg.vocab_words_per_label)
                .map(|t| format!("s{s}a{a}w{t}"))
                .collect();
            for _ in 0..cfg.samples_per_intent {
                let n = utterances.len();
                let len = rng.gen_range(2..=5);
                let mut tokens: Vec<&str> = Vec::with_capacity(len);
                let mut has_signature = false;
                for _ in 0..len {
                    if rng.gen_bool(cfg.stopword_rate) {
                        tokens.push(FIXTURE_STOPWORDS.choose(&mut rng).unwrap());
                    } else {
                        tokens.push(words.choose(&mut rng).unwrap());
                        has_signature = true;
                    }
                }
                if !has_signature {
                    let pos = rng.gen_range(0..tokens.len());
                    tokens[pos] = words.choose(&mut rng).unwrap();
                }
                let mut u = Utterance::new(
                    format!("u{n:06}"),
                    tokens.join(" "),
                    format!("s{s}"),
                    format!("a{a}"),
                    rng.gen_bool(cfg.headset_rate),
                    format!("spk{}", n % cfg.n_speakers),
                );
                u.audio_ref = Some(format!("audio/u{n:06}.flac"));
                utterances.push(u);
            }
        }
    }
    Corpus::new(utterances)
}
