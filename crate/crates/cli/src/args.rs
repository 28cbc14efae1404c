use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "oodsplit",
    version,
    about = "Build, audit and evaluate out-of-distribution corpus splits"
)]
pub struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// TOML file with default flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    Fixture(FixtureArgs),
    /// Build a split and its control.
    #[command(subcommand)]
    Split(SplitCommand),
    /// Audit a split: sizes, label overlaps and similarities.
    Stats(StatsArgs),
    /// Train a bag-of-words classifier on a split.
    Train(TrainArgs),
    /// Score one or more trained models on a split's test subsets.
    Eval(EvalArgs),
    /// Integrated-Gradients top words and frequency matrices.
    Attribute(AttributeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fixture(_) => "fixture",
            Command::Split(s) => match s {
                SplitCommand::Oov(_) => "split oov",
                SplitCommand::Cg(_) => "split cg",
                SplitCommand::DaCg(_) => "split da-cg",
                SplitCommand::Mic(_) => "split mic",
            },
            Command::Stats(_) => "stats",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Attribute(_) => "attribute",
        }
    }
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n_scenarios: usize,
    #[arg(long, default_value_t = 4)]
    pub actions_per_scenario: usize,
    #[arg(long, default_value_t = 40)]
    pub samples_per_intent: usize,
    #[arg(long, default_value_t = 4)]
    pub vocab_words_per_label: usize,
    #[arg(long, default_value_t = 0.3)]
    pub stopword_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub headset_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub n_speakers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum SplitCommand {
    /// Withhold a few intents from training.
    Oov(OovArgs),
    /// Compositional split from greedy divergence optimisation.
    Cg(CgArgs),
    /// Double-action pairs with withheld test action pairs.
    DaCg(DaArgs),
    /// Headset-only training with headset / far-field test sets.
    Mic(MicArgs),
}

#[derive(Debug, Args)]
pub struct CommonSplit {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A base train/dev/test split: read from disk, or drawn stratified by intent.
#[derive(Debug, Args)]
pub struct BaseSplit {
    #[arg(long)]
    pub base_split_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub base_dev_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub base_test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct OovArgs {
    #[command(flatten)]
    pub common: CommonSplit,
    #[command(flatten)]
    pub base: BaseSplit,
    #[arg(long, default_value_t = 4)]
    pub test_intents: usize,
    #[arg(long, default_value_t = 5)]
    pub min_samples: usize,
}

#[derive(Debug, Args)]
pub struct CgArgs {
    #[command(flatten)]
    pub common: CommonSplit,
    #[arg(long, default_value_t = 0.7)]
    pub target_dc: f64,
    /// Weight of the atom divergence in the objective.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    /// Consecutive candidate moves scored together; the best is committed.
    #[arg(long, default_value_t = 1)]
    pub pool: usize,
    #[arg(long, default_value_t = 100)]
    pub max_passes: usize,
}

#[derive(Debug, Args)]
pub struct DaArgs {
    #[command(flatten)]
    pub common: CommonSplit,
    #[command(flatten)]
    pub base: BaseSplit,
    #[arg(long, default_value_t = 200)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 30)]
    pub dev_pairs: usize,
    #[arg(long, default_value_t = 30)]
    pub test_pairs: usize,
    /// Restrict to these scenarios (repeatable).
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MicArgs {
    #[command(flatten)]
    pub common: CommonSplit,
    #[command(flatten)]
    pub base: BaseSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsFormat {
    Tsv,
    Json,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split_dir: PathBuf,
    /// Write report.tsv and report.json here; without it the report goes to stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StatsFormat::Tsv)]
    pub format: StatsFormat,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_scenario: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_action: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha_intent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ce,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Scenario,
    Intent,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub split_dir: PathBuf,
    /// Defaults to the corpus recorded in the split's manifest.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = LossArg::Ce)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = TargetArg::Scenario)]
    pub target: TargetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model directory; repeat to average over seeds.
    #[arg(long = "model-dir", required = true)]
    pub model_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub split_dir: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttrTargetArg {
    Predicted,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttrOutputArg {
    Logit,
    Softmax,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Model trained on the OOD split.
    #[arg(long)]
    pub model_dir: PathBuf,
    /// OOD split directory whose test subsets are attributed.
    #[arg(long)]
    pub split_dir: PathBuf,
    #[arg(long, requires = "control_split_dir")]
    pub control_model_dir: Option<PathBuf>,
    #[arg(long, requires = "control_model_dir")]
    pub control_split_dir: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = AttrTargetArg::Predicted)]
    pub target: AttrTargetArg,
    #[arg(long, value_enum, default_value_t = AttrOutputArg::Softmax)]
    pub output: AttrOutputArg,
}
