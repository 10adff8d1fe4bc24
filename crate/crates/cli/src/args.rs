use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use qe_core::chrf::ChrfParams;
use qe_core::corpus::{Direction, Stratify};
use qe_core::eval::GroupBy;
use qe_core::features::EncodingScheme;
use qe_core::forest::{CartParams, ForestParams, GbtParams};
use qe_core::linear::LassoParams;
use qe_core::mlp::MlpParams;
use qe_core::model::{ModelConfig, ModelKind};

/// Predict translation ChrF from tokenizer fertility and language metadata.
///
/// Every run writes `<subcommand>.manifest.json` into its output directory
/// with the configuration, the seed, SHA-256 digests of inputs and the list
/// of artifacts. Exit status: 0 success, 1 invalid input or configuration,
/// 2 internal failure.
#[derive(Debug, Parser)]
#[command(name = "qe", version)]
pub struct Cli {
    /// Worker threads for tree training and cross-validation [default: all cores].
    #[arg(long, global = true, env = "QE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Score candidate lines against reference lines.
    Chrf(ChrfArgs),
    /// Join records with language metadata and write feature rows as CSV.
    Featurize(FeaturizeArgs),
    /// Split, train one or all model families, and report held-out metrics.
    Train(TrainArgs),
    /// Write predictions of a saved model.
    Predict(PredictArgs),
    /// Score saved models on the held-out split (or all rows).
    Evaluate(EvaluateArgs),
    /// Split-gain feature importance of saved tree models.
    Importance(ImportanceArgs),
    /// Per-category mean predicted and actual scores, and fertility extremes.
    Marginals(MarginalsArgs),
    /// Generate a synthetic corpus with planted structure.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Chrf(_) => "chrf",
            Command::Featurize(_) => "featurize",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Importance(_) => "importance",
            Command::Marginals(_) => "marginals",
            Command::Synth(_) => "synth",
        }
    }

    pub fn out_dir(&self) -> &PathBuf {
        match self {
            Command::Chrf(a) => &a.out.out_dir,
            Command::Featurize(a) => &a.out.out_dir,
            Command::Train(a) => &a.out.out_dir,
            Command::Predict(a) => &a.out.out_dir,
            Command::Evaluate(a) => &a.out.out_dir,
            Command::Importance(a) => &a.out.out_dir,
            Command::Marginals(a) => &a.out.out_dir,
            Command::Synth(a) => &a.out.out_dir,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Directory for artifacts and the run manifest.
    #[arg(short = 'o', long = "out-dir", default_value = "qe-out")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ChrfOpts {
    /// F-beta weight of recall.
    #[arg(long = "beta", default_value_t = 2.0)]
    pub beta: f64,
    /// Largest character n-gram order.
    #[arg(long = "max-char-n", default_value_t = 6)]
    pub max_char_n: usize,
    /// Largest word n-gram order (0 for ChrF, 2 for ChrF++).
    #[arg(long = "word-n", default_value_t = 0)]
    pub word_n: usize,
}

impl ChrfOpts {
    pub fn params(&self) -> ChrfParams {
        ChrfParams {
            max_char_n: self.max_char_n,
            word_n: self.word_n,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ChrfArgs {
    /// Reference file, one segment per line.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Candidate file, aligned line by line with the reference.
    #[arg(long = "cand")]
    pub candidate: PathBuf,
    #[command(flatten)]
    pub chrf: ChrfOpts,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Where feature rows come from: a features CSV, or records plus language
/// metadata (and optionally a vocabulary).
#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Directory holding records.jsonl, languages.tsv and optionally vocab.tiktoken.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Records file (.jsonl or .tsv); overrides --data.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Language metadata TSV; overrides --data.
    #[arg(long)]
    pub languages: Option<PathBuf>,
    /// tiktoken rank file; defaults to <data>/vocab.tiktoken, else the built-in toy vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Precomputed feature CSV from `qe featurize`; replaces the three inputs above.
    #[arg(long, conflicts_with_all = ["records", "languages", "vocab"])]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub chrf: ChrfOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Ols,
    Lasso,
    Rf,
    Gbt,
    Mlp,
    All,
}

impl ModelChoice {
    pub fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::Ols => vec![ModelKind::Ols],
            ModelChoice::Lasso => vec![ModelKind::Lasso],
            ModelChoice::Rf => vec![ModelKind::Rf],
            ModelChoice::Gbt => vec![ModelKind::Gbt],
            ModelChoice::Mlp => vec![ModelKind::Mlp],
            ModelChoice::All => ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionChoice {
    /// One model over both directions.
    Pooled,
    /// A separate model per direction.
    Each,
    #[value(name = "en-xx")]
    EnXx,
    #[value(name = "xx-en")]
    XxEn,
}

impl DirectionChoice {
    /// `None` stands for pooled rows.
    pub fn scopes(self) -> Vec<Option<Direction>> {
        match self {
            DirectionChoice::Pooled => vec![None],
            DirectionChoice::Each => vec![Some(Direction::EnglishToXx), Some(Direction::XxToEnglish)],
            DirectionChoice::EnXx => vec![Some(Direction::EnglishToXx)],
            DirectionChoice::XxEn => vec![Some(Direction::XxToEnglish)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    OneHot,
    Ordinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratifyChoice {
    None,
    LangCode,
    JoshiClass,
}

impl From<StratifyChoice> for Stratify {
    fn from(s: StratifyChoice) -> Self {
        match s {
            StratifyChoice::None => Stratify::None,
            StratifyChoice::LangCode => Stratify::LangCode,
            StratifyChoice::JoshiClass => Stratify::JoshiClass,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct HyperArgs {
    /// Encoding override for every model (default: ordinal for trees, one-hot otherwise).
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeChoice>,

    /// Lasso penalty.
    #[arg(long, default_value_t = 0.01, help_heading = "Lasso")]
    pub lasso_lambda: f64,
    /// Lasso coordinate-descent sweep limit.
    #[arg(long, default_value_t = 10_000, help_heading = "Lasso")]
    pub lasso_max_iter: usize,
    /// Lasso convergence tolerance on the largest coefficient change.
    #[arg(long, default_value_t = 1e-8, help_heading = "Lasso")]
    pub lasso_tol: f64,

    /// Trees in the random forest.
    #[arg(long, default_value_t = 300, help_heading = "Random forest")]
    pub rf_trees: usize,
    /// Fraction of features drawn at each node.
    #[arg(long, default_value_t = 1.0 / 3.0, help_heading = "Random forest")]
    pub rf_feature_subsample: f64,
    /// Draw a bootstrap sample per tree.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, help_heading = "Random forest")]
    pub rf_bootstrap: bool,
    /// Forest tree depth limit.
    #[arg(long, default_value_t = 6, help_heading = "Random forest")]
    pub rf_max_depth: usize,
    /// Smallest forest leaf.
    #[arg(long, default_value_t = 5, help_heading = "Random forest")]
    pub rf_min_leaf: usize,
    /// Smallest variance reduction worth a split.
    #[arg(long, default_value_t = 0.0, help_heading = "Random forest")]
    pub rf_min_split_gain: f64,

    /// Boosting rounds.
    #[arg(long, default_value_t = 500, help_heading = "Gradient boosting")]
    pub gbt_rounds: usize,
    /// Shrinkage per round.
    #[arg(long, default_value_t = 0.1, help_heading = "Gradient boosting")]
    pub gbt_learning_rate: f64,
    /// L2 penalty on leaf weights.
    #[arg(long, default_value_t = 1.0, help_heading = "Gradient boosting")]
    pub gbt_lambda: f64,
    /// Minimum gain per split.
    #[arg(long, default_value_t = 0.0, help_heading = "Gradient boosting")]
    pub gbt_gamma: f64,
    /// Boosted tree depth limit.
    #[arg(long, default_value_t = 6, help_heading = "Gradient boosting")]
    pub gbt_max_depth: usize,
    /// Minimum hessian mass per child.
    #[arg(long, default_value_t = 1.0, help_heading = "Gradient boosting")]
    pub gbt_min_child_weight: f64,
    /// Initial prediction [default: training mean].
    #[arg(long, help_heading = "Gradient boosting")]
    pub gbt_base_score: Option<f64>,

    /// Hidden layer widths, comma separated (empty for a linear model).
    #[arg(long, default_value = "64,32", value_delimiter = ',', help_heading = "MLP")]
    pub mlp_hidden: Vec<usize>,
    /// Training epochs.
    #[arg(long, default_value_t = 200, help_heading = "MLP")]
    pub mlp_epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 64, help_heading = "MLP")]
    pub mlp_batch_size: usize,
    /// Adam step size.
    #[arg(long, default_value_t = 1e-3, help_heading = "MLP")]
    pub mlp_step_size: f64,
    /// Adam first-moment decay.
    #[arg(long, default_value_t = 0.9, help_heading = "MLP")]
    pub mlp_beta1: f64,
    /// Adam second-moment decay.
    #[arg(long, default_value_t = 0.999, help_heading = "MLP")]
    pub mlp_beta2: f64,
    /// Adam denominator offset.
    #[arg(long, default_value_t = 1e-8, help_heading = "MLP")]
    pub mlp_eps: f64,
}

impl HyperArgs {
    pub fn config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            lasso: LassoParams {
                lambda: self.lasso_lambda,
                max_iter: self.lasso_max_iter,
                tol: self.lasso_tol,
            },
            forest: ForestParams {
                n_trees: self.rf_trees,
                feature_subsample: self.rf_feature_subsample,
                bootstrap: self.rf_bootstrap,
                cart: CartParams {
                    max_depth: self.rf_max_depth,
                    min_leaf: self.rf_min_leaf,
                    min_split_gain: self.rf_min_split_gain,
                },
                seed,
            },
            gbt: GbtParams {
                n_rounds: self.gbt_rounds,
                learning_rate: self.gbt_learning_rate,
                lambda: self.gbt_lambda,
                gamma: self.gbt_gamma,
                max_depth: self.gbt_max_depth,
                min_child_weight: self.gbt_min_child_weight,
                base_score: self.gbt_base_score,
                seed,
            },
            mlp: MlpParams {
                hidden_layers: self.mlp_hidden.clone(),
                epochs: self.mlp_epochs,
                batch_size: self.mlp_batch_size,
                step_size: self.mlp_step_size,
                adam_beta1: self.mlp_beta1,
                adam_beta2: self.mlp_beta2,
                adam_eps: self.mlp_eps,
                seed,
                ..MlpParams::default()
            },
            scheme: self.scheme.map(|s| match s {
                SchemeChoice::OneHot => EncodingScheme::OneHot,
                SchemeChoice::Ordinal => EncodingScheme::TargetOrderedOrdinal,
            }),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model family to train.
    #[arg(long, value_enum, default_value_t = ModelChoice::All)]
    pub model: ModelChoice,
    /// Which translation directions to train on.
    #[arg(long, value_enum, default_value_t = DirectionChoice::Pooled)]
    pub direction: DirectionChoice,
    /// Master seed for the split and every seeded learner.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of rows held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Strata for the train/test split.
    #[arg(long, value_enum, default_value_t = StratifyChoice::LangCode)]
    pub stratify: StratifyChoice,
    /// Also run k-fold cross-validation on the training rows (0 disables).
    #[arg(long, default_value_t = 0)]
    pub cv: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Which saved models to use.
#[derive(Debug, Args, Serialize)]
pub struct ModelSelect {
    /// Directory of a `qe train` run [default: the output directory].
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Explicit model files; overrides --run-dir discovery.
    #[arg(long = "model-file")]
    pub model_files: Vec<PathBuf>,
    /// Restrict discovered models to one family.
    #[arg(long, value_enum, default_value_t = ModelChoice::All)]
    pub model: ModelChoice,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub models: ModelSelect,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub models: ModelSelect,
    /// Score every row instead of the run's held-out split.
    #[arg(long)]
    pub all_rows: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub models: ModelSelect,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupChoice {
    Region,
    Family,
    Script,
}

impl From<GroupChoice> for GroupBy {
    fn from(g: GroupChoice) -> Self {
        match g {
            GroupChoice::Region => GroupBy::Region,
            GroupChoice::Family => GroupBy::Family,
            GroupChoice::Script => GroupBy::Script,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MarginalsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub models: ModelSelect,
    /// Category to group by.
    #[arg(long, value_enum, default_value_t = GroupChoice::Region)]
    pub group_by: GroupChoice,
    /// Keep only the top and bottom k levels (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub top_k: usize,
    /// Languages listed at each end of the fertility ranking.
    #[arg(long, default_value_t = 10)]
    pub fertility_k: usize,
    /// Use every row instead of the run's held-out split.
    #[arg(long)]
    pub all_rows: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of languages.
    #[arg(long, default_value_t = 24)]
    pub languages: usize,
    /// Records per language.
    #[arg(long, default_value_t = 120)]
    pub rows: usize,
    /// Standard deviation of the Gaussian target noise.
    #[arg(long, default_value_t = 8.0)]
    pub noise_sd: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}
