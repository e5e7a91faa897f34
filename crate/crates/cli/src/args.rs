use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Retrieval-based answer ranking: build, train, query and serve.
///
/// Settings come from built-in defaults, then the `--config` file, then
/// `R2E_*` environment variables, then flags.
#[derive(Debug, Parser)]
#[command(name = "r2e", disable_version_flag = true)]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Artifact directory (`paths.artifacts`).
    #[arg(long, global = true)]
    pub artifacts: Option<PathBuf>,

    /// Base seed (`seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Override any config key, e.g. `--set mlm_train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Print the merged configuration as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,

    /// Print name and version as JSON and exit.
    #[arg(long)]
    pub version: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link and mask entities, split documents, write the masked corpus.
    Ingest(IngestArgs),
    /// Train the masked-language-model encoder on S1.
    TrainRetriever,
    /// Embed S1 and S2 passages into the per-answer evidence index.
    BuildIndex,
    /// Train the set-transformer reasoner on S2 queries.
    TrainReasoner,
    /// Rank every answer for a cloze query; one JSON line per answer.
    Rank(RankArgs),
    /// Shapley attribution of one answer's score to its evidence.
    Explain(ExplainArgs),
    /// Ranking metrics and AUROC on a labelled evaluation set.
    Evaluate(EvaluateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic world: documents, dictionary, evaluation set and config.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON-lines sentences: `{"doc_id", "year", "sent_idx", "text"}`.
    #[arg(long)]
    pub docs: PathBuf,
    /// TSV `entity_id<TAB>surface_form`.
    #[arg(long)]
    pub dictionary: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Corrected,
    Uncorrected,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    /// Evidence per answer (`inference.k`).
    #[arg(long)]
    pub k: Option<usize>,
    /// Bias-correction strength in [0, 1] (`inference.c`).
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub query: String,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Print only the first N answers.
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long, value_enum, default_value = "corrected")]
    pub basis: BasisArg,
    /// Only use evidence from this year or earlier.
    #[arg(long)]
    pub max_year: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub answer: String,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// `logit` or `probability` (`inference.output_space`).
    #[arg(long)]
    pub output_space: Option<String>,
    /// Permutations before antithetic doubling (`inference.permutations`).
    #[arg(short = 'M', long)]
    pub permutations: Option<usize>,
    /// Enumerate all coalitions instead of sampling.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// CSV `query,answer_id,label[,score[,year]]`.
    #[arg(long)]
    pub eval_set: PathBuf,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Hits cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    /// Average per gold answer before averaging over answers.
    #[arg(long)]
    pub macro_average: bool,
    /// Retrieve only evidence published before each record's year.
    #[arg(long)]
    pub before_query_year: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address (`server.bind`).
    #[arg(long)]
    pub bind: Option<String>,
    /// Idle session lifetime (`server.session_ttl_secs`).
    #[arg(long)]
    pub session_ttl_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub entities: usize,
    #[arg(long, default_value_t = 10000)]
    pub sentences: usize,
    /// Evaluation queries per entity.
    #[arg(long, default_value_t = 20)]
    pub queries_per_entity: usize,
    /// Give every entity its own block of topic words.
    #[arg(long)]
    pub disjoint: bool,
}
