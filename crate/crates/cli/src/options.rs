use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distillrank::trainer::DistillConfig;

#[derive(Debug, Parser)]
#[command(name = "distillrank", version, about = "Dense retrieval training by relevance distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with judgments and a relevance oracle.
    GenData(GenDataArgs),
    /// Train a dual encoder with iterative distillation.
    Train(TrainArgs),
    /// Retrieve the top-k documents for a query split.
    Retrieve(RetrieveArgs),
    /// Rerank a run with the pointwise teacher.
    Rerank(RerankArgs),
    /// Sample rank-window pairs from a reranked run.
    SamplePairs(SamplePairsArgs),
    /// Score a run against relevance judgments.
    Evaluate(EvaluateArgs),
    /// Measure how often a pointwise ranking contradicts the pairwise teacher.
    Disagreement(DisagreementArgs),
}

/// Distillation settings. Flags override values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub pairs: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub lambda_kd: Option<String>,
    #[arg(long)]
    pub lambda_pair: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub candidates: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub use_cl: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub use_kd: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub use_pair: Option<String>,
    /// Drop the contrastive term; judgments are never read for training.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub zero_shot: Option<String>,
    #[arg(long)]
    pub pair_loss_reduction: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub symmetrize_pairs: Option<String>,
    /// dot, cosine or maxsim.
    #[arg(long)]
    pub similarity: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shared_tables: Option<String>,
    #[arg(long)]
    pub teacher_noise: Option<String>,
    #[arg(long)]
    pub pair_teacher_noise: Option<String>,
    #[arg(long)]
    pub teacher_sharpness: Option<String>,
    /// Worker threads; results are identical for every value.
    #[arg(long)]
    pub workers: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 26] {
        [
            ("seed", &self.seed),
            ("k", &self.k),
            ("delta", &self.delta),
            ("pairs", &self.pairs),
            ("tau", &self.tau),
            ("lambda-kd", &self.lambda_kd),
            ("lambda-pair", &self.lambda_pair),
            ("batch-size", &self.batch_size),
            ("candidates", &self.candidates),
            ("learning-rate", &self.learning_rate),
            ("momentum", &self.momentum),
            ("steps", &self.steps),
            ("iterations", &self.iterations),
            ("use-cl", &self.use_cl),
            ("use-kd", &self.use_kd),
            ("use-pair", &self.use_pair),
            ("zero-shot", &self.zero_shot),
            ("pair-loss-reduction", &self.pair_loss_reduction),
            ("symmetrize-pairs", &self.symmetrize_pairs),
            ("similarity", &self.similarity),
            ("dim", &self.dim),
            ("shared-tables", &self.shared_tables),
            ("teacher-noise", &self.teacher_noise),
            ("pair-teacher-noise", &self.pair_teacher_noise),
            ("teacher-sharpness", &self.teacher_sharpness),
            ("workers", &self.workers),
        ]
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> distillrank::Result<DistillConfig> {
        let mut config = DistillConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                distillrank::Error::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            config.apply_text(&text)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        if config.zero_shot && config.use_cl && self.use_cl.is_some() {
            return Err(distillrank::Error::Config(
                "--use-cl contradicts --zero-shot, which drops the contrastive term".into(),
            ));
        }
        config.resolve()
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory for docs, queries, qrels and the oracle.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub train_queries: Option<usize>,
    #[arg(long)]
    pub dev_queries: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub terms_per_topic: Option<usize>,
    #[arg(long)]
    pub background_terms: Option<usize>,
    #[arg(long)]
    pub doc_len: Option<usize>,
    #[arg(long)]
    pub query_len: Option<usize>,
    #[arg(long)]
    pub topics_per_doc: Option<usize>,
    #[arg(long)]
    pub topics_per_query: Option<usize>,
    #[arg(long)]
    pub background_rate: Option<f64>,
    #[arg(long)]
    pub relevance_scale: Option<f64>,
    /// Label noise added before thresholding judgments.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairwiseKind {
    /// Logistic of the oracle relevance gap plus seeded noise.
    Synthetic,
    /// Prompted adapter over a deterministic in-process mock model.
    LlmMock,
    /// Prompted adapter replaying recorded responses from `--llm-responses`.
    LlmFile,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory (docs.jsonl, queries.jsonl, oracle.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Judgments; defaults to qrels.txt in the data directory.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Output directory for checkpoints, caches and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Starting checkpoint; a fresh model is initialized otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub pairwise_teacher: PairwiseKind,
    #[arg(long)]
    pub llm_responses: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    All,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output TREC run file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: SplitArg,
    /// Load a prebuilt index instead of encoding the corpus.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Write the index built for this run.
    #[arg(long)]
    pub save_index: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub tag: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SamplePairsArgs {
    /// Pointwise-reranked run.
    #[arg(long)]
    pub run: PathBuf,
    /// Output JSONL, one line per query.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus directory; when given, pairs are scored by the pairwise teacher.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Metric such as `mrr@10`; repeat or comma-separate for several.
    #[arg(long = "metric", value_delimiter = ',', default_value = "mrr@10,ndcg@10,recall@100,success@5")]
    pub metrics: Vec<String>,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DisagreementArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pointwise-reranked run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}
