mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "macropat", version, about = "Mine macro-pattern templates from dialogue-act sequences")]
pub struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON object whose keys mirror the subcommand's flags (underscores for dashes).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving outputs and manifest.json.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate meetings from a planted template.
    SynthTemplate(SynthTemplateArgs),
    /// Generate meetings with one annotated decision window each.
    SynthDecision(SynthDecisionArgs),
    /// Search for the template minimizing the regularized objective.
    Mine(MineArgs),
    /// Generalization bound for the template class.
    Bound(BoundArgs),
    /// Cross-validated decision-window detection.
    Detect(DetectArgs),
    /// Rank act features by linear SVM coefficient.
    RankFeatures(RankFeaturesArgs),
    /// First-order Markov chain over act labels.
    Markov(MarkovArgs),
    /// Profile HMM and its consensus sequence.
    Phmm(PhmmArgs),
    /// Wrap-up time against decision end, two-segment fit.
    Wrapup(WrapupArgs),
    /// Lexicon significance test and word SVM ranking.
    Persuade(PersuadeArgs),
    /// Per-word Fisher screening of suggestion acceptance.
    ScreenWords(ScreenWordsArgs),
}

#[derive(Args, Serialize, Deserialize)]
pub struct SynthTemplateArgs {
    /// Template nodes as labels, e.g. SP,AP,AN.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<String>>,
    /// Back edges as from:to node indices, e.g. 2:0.
    #[arg(long, value_delimiter = ',')]
    pub back: Vec<String>,
    /// Template JSON file; replaces --nodes and --back.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "SP,SN,AP,AN")]
    pub alphabet: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Args, Serialize, Deserialize)]
pub struct SynthDecisionArgs {
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long, default_value_t = 70)]
    pub window_size: usize,
    /// Act rates inside the decision window, in feature order.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.05,0.37,0.04,0.10,0.39")]
    pub inside: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.05,0.38,0.08,0.06,0.38")]
    pub outside: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Exact,
    Windowed,
}

#[derive(Args, Serialize, Deserialize)]
pub struct SequenceArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Labels kept in the sequences; all labels when absent.
    #[arg(long, value_delimiter = ',')]
    pub keep: Option<Vec<String>>,
    /// Keep repeated acts by the same speaker.
    #[arg(long)]
    pub no_collapse: bool,
}

#[derive(Args, Serialize, Deserialize)]
pub struct MineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub seqs: SequenceArgs,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub c2: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 0.95)]
    pub cool: f64,
    #[arg(long, default_value_t = 800)]
    pub k_restart: usize,
    #[arg(long, default_value_t = 4000)]
    pub max_accepted: usize,
    #[arg(long, default_value_t = 40_000)]
    pub max_proposals: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, default_value_t = 5)]
    pub max_back: usize,
    /// `per-meeting` or a number of starts.
    #[arg(long, default_value = "per-meeting")]
    pub restarts: String,
    #[arg(long, value_enum, default_value_t = LossArg::Exact)]
    pub loss: LossArg,
    /// Length window for `--loss windowed`.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Language length used to group equivalent results.
    #[arg(long, default_value_t = 8)]
    pub equivalence_cap: usize,
}

#[derive(Args, Serialize, Deserialize)]
pub struct BoundArgs {
    #[arg(long)]
    pub remp: Option<f64>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long = "L", id = "L")]
    #[serde(rename = "L")]
    pub max_len: Option<u64>,
    #[arg(long = "B", id = "B")]
    #[serde(rename = "B")]
    pub max_back: Option<u64>,
    #[arg(long)]
    pub alphabet: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub loss_scale: f64,
}

#[derive(Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 70)]
    pub window_size: usize,
    #[arg(long, default_value_t = 15)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "linear-svm,logistic,gaussian-nb,kmeans,em-gmm")]
    pub models: Vec<String>,
    /// SVM regularization; large values shrink the margin until every window is negative.
    #[arg(long, default_value_t = 0.01)]
    pub svm_lambda: f64,
}

#[derive(Args, Serialize, Deserialize)]
pub struct RankFeaturesArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 70)]
    pub window_size: usize,
    #[arg(long, default_value_t = 15)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.01)]
    pub svm_lambda: f64,
}

#[derive(Args, Serialize, Deserialize)]
pub struct MarkovArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub seqs: SequenceArgs,
    #[arg(long, default_value_t = 4)]
    pub top: usize,
}

#[derive(Args, Serialize, Deserialize)]
pub struct PhmmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub seqs: SequenceArgs,
    /// Match states; the median sequence length when absent.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub pseudocount: f64,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
}

#[derive(Args, Serialize, Deserialize)]
pub struct WrapupArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Decision-end times (minutes) to predict wrap-up for.
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<f64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct PersuadeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// One word per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// One word per line; a built-in English list when absent.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Also fit on the words passing a Fisher screen at this level.
    #[arg(long)]
    pub screen_alpha: Option<f64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ScreenWordsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { run::EXIT_USAGE } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(run::EXIT_USAGE);
        }
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match run::dispatch(cli, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
