//! Command-line arguments and their config-file counterparts.
//!
//! Every per-command flag `--foo-bar` has a config key `foo_bar` in the
//! table named after the command (`[generate]`, `[filter]`, ...). Flags win.
//! Boolean flags take an optional value: `--cot` or `--cot false`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ie-forge",
    version,
    about = "Synthesize, filter, format and evaluate instruction-driven text-to-table data"
)]
pub struct Cli {
    /// TOML config file with one table per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Upper bound on parallel gateway calls and worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the five-step synthesis pipeline and filter its output.
    Generate(GenerateArgs),
    /// Apply the four quality filters to raw pairs or stored instances.
    Filter(FilterArgs),
    /// Turn instances into chat-formatted training sequences.
    Format(FormatArgs),
    /// Score predicted tables against gold tables.
    Evaluate(EvaluateArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Correlate metric scores with human ratings and measure agreement.
    Correlate(CorrelateArgs),
    /// Probe a running scorer service.
    ScorerCheck(ScorerCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Lexical,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Fallback,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Raw,
    Instances,
}

/// Top-level layout of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub jobs: Option<usize>,
    #[serde(default)]
    pub generate: GenerateArgs,
    #[serde(default)]
    pub filter: FilterArgs,
    #[serde(default)]
    pub format: FormatArgs,
    #[serde(default)]
    pub evaluate: EvaluateArgs,
    #[serde(default)]
    pub stats: StatsArgs,
    #[serde(default)]
    pub correlate: CorrelateArgs,
    #[serde(default, rename = "scorer-check")]
    pub scorer_check: ScorerCheckArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Fills every unset field of `$a` from `$b`.
macro_rules! merge_fields {
    ($a:ident, $b:ident; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )*
    };
}

/// Filter threshold overrides shared by `generate` and `filter`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ThresholdFlags {
    pub min_rows_plus_cols_exclusive: Option<usize>,
    pub min_cols_exclusive: Option<usize>,
    pub max_na_exclusive: Option<usize>,
    pub consistency_threshold: Option<f64>,
    pub faithfulness_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    /// Use the deterministic offline backend (needs --seed).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", conflicts_with = "remote")]
    pub mock: Option<bool>,
    /// Use the chat-completions endpoint from IE_FORGE_API_URL.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub remote: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub per_iteration: Option<usize>,
    #[arg(long)]
    pub paraphrase_batch: Option<usize>,
    /// Generate direct tables.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub direct: Option<bool>,
    /// Generate chain-of-thought tables.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cot: Option<bool>,
    #[arg(long)]
    pub min_text_words: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    /// Fall back to lexical scoring when the neural scorer is unavailable.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fallback: Option<bool>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoints in --out.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,
    #[arg(long)]
    pub defect_malformed_table: Option<f64>,
    #[arg(long)]
    pub defect_extra_headers: Option<f64>,
    #[arg(long)]
    pub defect_missing_cells: Option<f64>,
    #[arg(long)]
    pub defect_paraphrase_miscount: Option<f64>,
    #[arg(long)]
    pub defect_empty_text: Option<f64>,
    #[arg(long)]
    pub min_rows_plus_cols_exclusive: Option<usize>,
    #[arg(long)]
    pub min_cols_exclusive: Option<usize>,
    #[arg(long)]
    pub max_na_exclusive: Option<usize>,
    #[arg(long)]
    pub consistency_threshold: Option<f64>,
    #[arg(long)]
    pub faithfulness_threshold: Option<f64>,
}

impl GenerateArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; mock, remote, seed, iterations, per_iteration, paraphrase_batch, direct, cot,
            min_text_words, temperature, scorer, fallback, prompts, out, resume, defect_malformed_table,
            defect_extra_headers, defect_missing_cells, defect_paraphrase_miscount, defect_empty_text,
            min_rows_plus_cols_exclusive, min_cols_exclusive,
            max_na_exclusive, consistency_threshold, faithfulness_threshold);
    }

    pub fn thresholds(&self) -> ThresholdFlags {
        ThresholdFlags {
            min_rows_plus_cols_exclusive: self.min_rows_plus_cols_exclusive,
            min_cols_exclusive: self.min_cols_exclusive,
            max_na_exclusive: self.max_na_exclusive,
            consistency_threshold: self.consistency_threshold,
            faithfulness_threshold: self.faithfulness_threshold,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterArgs {
    /// Raw pairs (JSONL) or stored instances, see --format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fallback: Option<bool>,
    #[arg(long)]
    pub min_rows_plus_cols_exclusive: Option<usize>,
    #[arg(long)]
    pub min_cols_exclusive: Option<usize>,
    #[arg(long)]
    pub max_na_exclusive: Option<usize>,
    #[arg(long)]
    pub consistency_threshold: Option<f64>,
    #[arg(long)]
    pub faithfulness_threshold: Option<f64>,
}

impl FilterArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; input, format, out, scorer, fallback, min_rows_plus_cols_exclusive, min_cols_exclusive,
            max_na_exclusive, consistency_threshold, faithfulness_threshold);
    }

    pub fn thresholds(&self) -> ThresholdFlags {
        ThresholdFlags {
            min_rows_plus_cols_exclusive: self.min_rows_plus_cols_exclusive,
            min_cols_exclusive: self.min_cols_exclusive,
            max_na_exclusive: self.max_na_exclusive,
            consistency_threshold: self.consistency_threshold,
            faithfulness_threshold: self.faithfulness_threshold,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl FormatArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; data, out, report);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Predictions, one `{"id", "output"}` object per line.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write per-instance scores (JSONL), the input of `correlate`.
    #[arg(long)]
    pub per_instance: Option<PathBuf>,
}

impl EvaluateArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; pred, gold, embedder, report, per_instance);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl StatsArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; data, report);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelateArgs {
    /// Per-instance scores written by `evaluate --per-instance`.
    #[arg(long)]
    pub evals: Option<PathBuf>,
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl CorrelateArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; evals, ratings, report);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerCheckArgs {
    /// Service URL; defaults to IE_FORGE_SCORER_URL.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl ScorerCheckArgs {
    pub fn merge(&mut self, b: Self) {
        merge_fields!(self, b; url, report);
    }
}
