//! Training-data synthesis: fixed instructions, background texts, open
//! instructions, paraphrasing and table generation, followed by the
//! quality filter.
//!
//! Each step is a barrier. Requests inside a step go through
//! [`Gateway::complete_many`], which keeps request order, and every request
//! carries a seed derived from the run seed, the step and the item index.
//! With a deterministic backend the whole run is therefore reproducible.
//! When a checkpoint directory is configured each step writes its output as
//! JSONL, and a rerun with `resume` reuses finished steps.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{save_instances, word_count, write_jsonl_atomic, Category, DatasetError, Instance, Variant};
use crate::filter::{apply_filters, EntailmentScorer, FilterError, FilterReport, FilterThresholds};
use crate::gateway::{
    ChatRequest, Gateway, GatewayError, PromptContext, PromptError, PromptLibrary, PromptStep, DEFAULT_SYSTEM_PROMPT,
};
use crate::util::{derive_seed, to_json_pretty, write_atomic};

pub mod parse;

pub use parse::{instruction_headers, leaked_headers, parse_instruction_list, parse_paraphrases, split_cot};

pub const STEP_FILES: [&str; 5] = [
    "step_01_instructions.jsonl",
    "step_02_texts.jsonl",
    "step_03_open.jsonl",
    "step_04_paraphrased.jsonl",
    "step_05_raw.jsonl",
];
pub const SURVIVORS_FILE: &str = "survivors.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const PROGRESS_FILE: &str = "progress.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    ComprehensiveQuery,
    CasualInteraction,
    DirectCommand,
    ProfessionalRequest,
}

impl Style {
    pub const ALL: [Style; 4] =
        [Style::ComprehensiveQuery, Style::CasualInteraction, Style::DirectCommand, Style::ProfessionalRequest];

    /// Wording used inside the paraphrase prompt.
    pub fn phrase(self) -> &'static str {
        match self {
            Style::ComprehensiveQuery => "comprehensive query",
            Style::CasualInteraction => "casual interaction",
            Style::DirectCommand => "direct command",
            Style::ProfessionalRequest => "professional request",
        }
    }
}

/// Prompt wording for a paraphrase batch whose styles differ.
pub const MIXED_STYLE_PHRASE: &str = "the style named in brackets after each sentence number";

/// One generated table attempt before filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPair {
    pub id: String,
    pub instruction: String,
    pub domain: String,
    pub text: String,
    pub category: Category,
    pub style: Option<Style>,
    /// False when the paraphrase batch was discarded or never sent.
    pub paraphrased: bool,
    /// Open instruction still names a header of its fixed instruction.
    pub header_leak: bool,
    pub raw_table_output: String,
    pub explanation: Option<String>,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_iterations: usize,
    pub instructions_per_iteration: usize,
    pub paraphrase_batch_size: usize,
    pub direct: bool,
    pub cot: bool,
    pub seed: u64,
    pub concurrency: usize,
    /// Background texts shorter than this are retried once, then dropped.
    pub min_text_words: usize,
    pub temperature: f64,
    pub thresholds: FilterThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_iterations: 500,
            instructions_per_iteration: 10,
            paraphrase_batch_size: 10,
            direct: true,
            cot: true,
            seed: 0,
            concurrency: 8,
            min_text_words: 40,
            temperature: 1.0,
            thresholds: FilterThresholds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive");
        }
        if self.instructions_per_iteration == 0 {
            return bad("instructions_per_iteration must be positive");
        }
        if self.paraphrase_batch_size == 0 {
            return bad("paraphrase_batch_size must be positive");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be positive");
        }
        if !self.direct && !self.cot {
            return bad("at least one of direct and cot must be enabled");
        }
        self.thresholds.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v = Vec::new();
        if self.direct {
            v.push(Variant::Direct);
        }
        if self.cot {
            v.push(Variant::Cot);
        }
        v
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("no instruction survived {iterations} generation iteration(s)")]
    AllIterationsFailed { iterations: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot resume: {0}")]
    Resume(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionStage {
    pub iterations: usize,
    pub failed_iterations: usize,
    pub parsed: usize,
    /// Expected items that were missing or unparseable.
    pub dropped_items: usize,
    pub duplicates: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStage {
    pub requested: usize,
    pub retried: usize,
    pub dropped: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenStage {
    pub requested: usize,
    pub retried: usize,
    pub header_leaks: usize,
    pub dropped: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseStage {
    pub instructions: usize,
    pub batches: usize,
    pub discarded_batches: usize,
    pub paraphrased: usize,
    /// Instructions left as generated, including any trailing partial batch.
    pub unparaphrased: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableStage {
    pub attempts: usize,
    pub failures: usize,
    pub raw: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub completed_steps: usize,
    pub instructions: InstructionStage,
    pub texts: TextStage,
    pub open_instructions: OpenStage,
    pub paraphrase: ParaphraseStage,
    pub tables: BTreeMap<Variant, TableStage>,
    pub filter: Option<FilterReport>,
}

impl PipelineReport {
    /// Table attempts = generation failures + raw outputs, and raw outputs =
    /// survivors + rejections, for every variant.
    pub fn is_balanced(&self) -> bool {
        let Some(filter) = &self.filter else {
            return false;
        };
        filter.is_balanced()
            && self.tables.iter().all(|(v, t)| {
                let raw = filter.by_variant.get(v).map_or(0, |c| c.raw_count);
                t.attempts == t.failures + t.raw && t.raw == raw
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInstruction {
    pub index: usize,
    pub instruction: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextItem {
    pub index: usize,
    pub instruction: String,
    pub domain: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenItem {
    pub index: usize,
    pub instruction: String,
    pub header_leak: bool,
}

/// An instruction paired with its text, ready for table generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionItem {
    pub id: String,
    pub category: Category,
    pub instruction: String,
    pub original_instruction: String,
    pub domain: String,
    pub text: String,
    pub style: Style,
    pub paraphrased: bool,
    pub header_leak: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub survivors: Vec<Instance>,
    pub raw: Vec<RawPair>,
    pub report: PipelineReport,
}

pub struct Pipeline<'a> {
    cfg: PipelineConfig,
    gateway: &'a Gateway,
    prompts: &'a PromptLibrary,
    scorer: &'a dyn EntailmentScorer,
    checkpoint_dir: Option<PathBuf>,
    resume: bool,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        cfg: PipelineConfig,
        gateway: &'a Gateway,
        prompts: &'a PromptLibrary,
        scorer: &'a dyn EntailmentScorer,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        if prompts.paraphrase_batch() != cfg.paraphrase_batch_size {
            return Err(PipelineError::Config(format!(
                "prompt library expects paraphrase batches of {}, config says {}",
                prompts.paraphrase_batch(),
                cfg.paraphrase_batch_size
            )));
        }
        Ok(Self { cfg, gateway, prompts, scorer, checkpoint_dir: None, resume: false })
    }

    /// Writes step outputs, survivors and the report under `dir`. With
    /// `resume`, steps whose checkpoints exist are loaded instead of rerun.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>, resume: bool) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self.resume = resume;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn request(&self, step: PromptStep, ctx: &PromptContext, index: u64) -> Result<ChatRequest, PromptError> {
        let prompt = self.prompts.render(step, ctx)?;
        Ok(ChatRequest::new(DEFAULT_SYSTEM_PROMPT, prompt)
            .with_temperature(self.cfg.temperature)
            .with_seed(derive_seed(self.cfg.seed, step.as_str(), index))
            .with_step(step))
    }

    fn first(result: Result<Vec<String>, GatewayError>, what: &str) -> Option<String> {
        match result {
            Ok(mut v) if !v.is_empty() => Some(v.swap_remove(0)),
            Ok(_) => None,
            Err(e) => {
                log::warn!("{what}: {e}");
                None
            }
        }
    }

    pub fn generate_fixed_instructions(
        &self,
        stage: &mut InstructionStage,
    ) -> Result<Vec<SeedInstruction>, PipelineError> {
        let reqs: Vec<ChatRequest> = (0..self.cfg.n_iterations)
            .map(|i| self.request(PromptStep::FixedInstructionGen, &PromptContext::new(), i as u64))
            .collect::<Result<_, _>>()?;
        let expected = self.cfg.instructions_per_iteration;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        stage.iterations = reqs.len();
        for (i, result) in self.gateway.complete_many(&reqs).into_iter().enumerate() {
            let Some(completion) = Self::first(result, &format!("instruction iteration {i}")) else {
                stage.failed_iterations += 1;
                stage.dropped_items += expected;
                continue;
            };
            let mut parsed = parse_instruction_list(&completion);
            parsed.items.truncate(expected);
            let dropped = expected - parsed.items.len();
            if dropped > 0 {
                log::info!("instruction iteration {i}: dropped {dropped} unparseable item(s)");
            }
            stage.parsed += parsed.items.len();
            stage.dropped_items += dropped;
            if parsed.items.is_empty() {
                stage.failed_iterations += 1;
            }
            for (instruction, domain) in parsed.items {
                let instruction = instruction.trim().to_string();
                if !seen.insert(instruction.clone()) {
                    stage.duplicates += 1;
                    continue;
                }
                out.push(SeedInstruction { index: out.len(), instruction, domain: domain.trim().to_string() });
            }
        }
        stage.kept = out.len();
        if out.is_empty() {
            return Err(PipelineError::AllIterationsFailed { iterations: stage.iterations });
        }
        Ok(out)
    }

    pub fn generate_background_texts(
        &self,
        seeds: &[SeedInstruction],
        stage: &mut TextStage,
    ) -> Result<Vec<TextItem>, PipelineError> {
        let step = PromptStep::BackgroundTextGen;
        let n = seeds.len() as u64;
        let ctx = |s: &SeedInstruction| PromptContext::new().slot("instruction", s.instruction.as_str());
        let reqs: Vec<ChatRequest> =
            seeds.iter().map(|s| self.request(step, &ctx(s), s.index as u64)).collect::<Result<_, _>>()?;
        stage.requested = seeds.len();
        let good = |t: &Option<String>| t.as_deref().is_some_and(|t| word_count(t) >= self.cfg.min_text_words);
        let mut texts: Vec<Option<String>> = self
            .gateway
            .complete_many(&reqs)
            .into_iter()
            .enumerate()
            .map(|(i, r)| Self::first(r, &format!("background text {i}")))
            .collect();
        let retry: Vec<usize> = (0..texts.len()).filter(|i| !good(&texts[*i])).collect();
        let retry_reqs: Vec<ChatRequest> = retry
            .iter()
            .map(|&i| self.request(step, &ctx(&seeds[i]), n + seeds[i].index as u64))
            .collect::<Result<_, _>>()?;
        stage.retried = retry.len();
        for (&i, r) in retry.iter().zip(self.gateway.complete_many(&retry_reqs)) {
            texts[i] = Self::first(r, &format!("background text {i} retry"));
        }
        let mut out = Vec::new();
        for (s, text) in seeds.iter().zip(texts) {
            if !good(&text) {
                log::info!("background text {}: too short after retry, dropped", s.index);
                stage.dropped += 1;
                continue;
            }
            out.push(TextItem {
                index: s.index,
                instruction: s.instruction.clone(),
                domain: s.domain.clone(),
                text: text.unwrap_or_default().trim().to_string(),
            });
        }
        stage.kept = out.len();
        Ok(out)
    }

    pub fn generate_open_instructions(
        &self,
        texts: &[TextItem],
        stage: &mut OpenStage,
    ) -> Result<Vec<OpenItem>, PipelineError> {
        let step = PromptStep::OpenInstructionGen;
        let n = texts.len() as u64;
        let ctx = |t: &TextItem| PromptContext::new().slot("text", t.text.as_str());
        let reqs: Vec<ChatRequest> =
            texts.iter().map(|t| self.request(step, &ctx(t), t.index as u64)).collect::<Result<_, _>>()?;
        stage.requested = texts.len();
        let clean = |t: &TextItem, open: &Option<String>| {
            open.as_deref().is_some_and(|o| !o.trim().is_empty() && leaked_headers(o, &t.instruction).is_empty())
        };
        let mut opens: Vec<Option<String>> = self
            .gateway
            .complete_many(&reqs)
            .into_iter()
            .enumerate()
            .map(|(i, r)| Self::first(r, &format!("open instruction {i}")).map(|s| s.trim().to_string()))
            .collect();
        let retry: Vec<usize> = (0..texts.len()).filter(|&i| !clean(&texts[i], &opens[i])).collect();
        let retry_reqs: Vec<ChatRequest> = retry
            .iter()
            .map(|&i| self.request(step, &ctx(&texts[i]), n + texts[i].index as u64))
            .collect::<Result<_, _>>()?;
        stage.retried = retry.len();
        for (&i, r) in retry.iter().zip(self.gateway.complete_many(&retry_reqs)) {
            let again = Self::first(r, &format!("open instruction {i} retry")).map(|s| s.trim().to_string());
            // Keep the first answer if the retry produced nothing usable.
            if again.as_deref().is_some_and(|s| !s.is_empty()) {
                opens[i] = again;
            }
        }
        let mut out = Vec::new();
        for (t, open) in texts.iter().zip(opens) {
            let Some(open) = open.filter(|o| !o.is_empty()) else {
                stage.dropped += 1;
                continue;
            };
            let leaks = leaked_headers(&open, &t.instruction);
            if !leaks.is_empty() {
                log::warn!("open instruction {} names header(s) {leaks:?}; kept with a warning flag", t.index);
                stage.header_leaks += 1;
            }
            out.push(OpenItem { index: t.index, instruction: open, header_leak: !leaks.is_empty() });
        }
        stage.kept = out.len();
        Ok(out)
    }

    /// Pairs every text with its fixed and open instruction and assigns each
    /// a style drawn uniformly with the run seed.
    pub fn collect_items(&self, texts: &[TextItem], opens: &[OpenItem]) -> Vec<InstructionItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, "styles", 0));
        let opens: BTreeMap<usize, &OpenItem> = opens.iter().map(|o| (o.index, o)).collect();
        let mut items = Vec::new();
        for t in texts {
            items.push(InstructionItem {
                id: format!("f{:05}", t.index),
                category: Category::Fixed,
                instruction: t.instruction.clone(),
                original_instruction: t.instruction.clone(),
                domain: t.domain.clone(),
                text: t.text.clone(),
                style: *Style::ALL.choose(&mut rng).unwrap(),
                paraphrased: false,
                header_leak: false,
            });
            if let Some(o) = opens.get(&t.index) {
                items.push(InstructionItem {
                    id: format!("o{:05}", t.index),
                    category: Category::Open,
                    instruction: o.instruction.clone(),
                    original_instruction: o.instruction.clone(),
                    domain: t.domain.clone(),
                    text: t.text.clone(),
                    style: *Style::ALL.choose(&mut rng).unwrap(),
                    paraphrased: false,
                    header_leak: o.header_leak,
                });
            }
        }
        items
    }

    pub fn paraphrase(&self, items: &mut [InstructionItem], stage: &mut ParaphraseStage) -> Result<(), PipelineError> {
        let size = self.cfg.paraphrase_batch_size;
        let full = items.len() / size;
        let mut reqs = Vec::with_capacity(full);
        for (b, batch) in items.chunks(size).take(full).enumerate() {
            reqs.push(self.request(PromptStep::Paraphrase, &paraphrase_context(batch), b as u64)?);
        }
        stage.instructions = items.len();
        stage.batches = full;
        let results = self.gateway.complete_many(&reqs);
        for (b, (batch, result)) in items.chunks_mut(size).zip(results).enumerate() {
            let lines = Self::first(result, &format!("paraphrase batch {b}")).map(|c| parse_paraphrases(&c));
            match lines {
                Some(lines) if lines.len() == batch.len() => {
                    for (item, line) in batch.iter_mut().zip(lines) {
                        item.instruction = line;
                        item.paraphrased = true;
                    }
                }
                other => {
                    let got = other.map_or(0, |l| l.len());
                    log::warn!("paraphrase batch {b}: expected {} lines, got {got}; batch discarded", batch.len());
                    stage.discarded_batches += 1;
                }
            }
        }
        stage.paraphrased = items.iter().filter(|i| i.paraphrased).count();
        stage.unparaphrased = items.len() - stage.paraphrased;
        Ok(())
    }

    pub fn generate_tables(
        &self,
        items: &[InstructionItem],
        stages: &mut BTreeMap<Variant, TableStage>,
    ) -> Result<Vec<RawPair>, PipelineError> {
        let mut out = Vec::new();
        for variant in self.cfg.variants() {
            let step = match variant {
                Variant::Direct => PromptStep::TableGenDirect,
                Variant::Cot => PromptStep::TableGenCot,
            };
            let reqs: Vec<ChatRequest> = items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let ctx = PromptContext::new()
                        .slot("instruction", item.instruction.as_str())
                        .slot("text", item.text.as_str());
                    self.request(step, &ctx, i as u64)
                })
                .collect::<Result<_, _>>()?;
            let stage = stages.entry(variant).or_default();
            stage.attempts = items.len();
            for (item, result) in items.iter().zip(self.gateway.complete_many(&reqs)) {
                let Some(completion) = Self::first(result, &format!("{} table for {}", variant.as_str(), item.id))
                else {
                    stage.failures += 1;
                    continue;
                };
                let (explanation, raw) = match variant {
                    Variant::Direct => (None, completion),
                    Variant::Cot => split_cot(&completion),
                };
                out.push(RawPair {
                    id: format!("{}-{}", item.id, variant.as_str()),
                    instruction: item.instruction.clone(),
                    domain: item.domain.clone(),
                    text: item.text.clone(),
                    category: item.category,
                    style: Some(item.style),
                    paraphrased: item.paraphrased,
                    header_leak: item.header_leak,
                    raw_table_output: raw,
                    explanation,
                    variant,
                });
                stage.raw += 1;
            }
        }
        Ok(out)
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|d| d.join(name))
    }

    fn save_step<T: Serialize>(&self, step: usize, items: &[T], report: &PipelineReport) -> Result<(), PipelineError> {
        if let Some(path) = self.path(STEP_FILES[step - 1]) {
            write_jsonl_atomic(&path, items, |x| serde_json::to_string(x).expect("checkpoint records serialize"))
                .map_err(|source| PipelineError::Io { path, source })?;
            self.write_json(PROGRESS_FILE, report)?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        if let Some(path) = self.path(name) {
            write_atomic(&path, to_json_pretty(value).as_bytes())
                .map_err(|source| PipelineError::Io { path, source })?;
        }
        Ok(())
    }

    fn load_step<T: DeserializeOwned>(
        &self,
        step: usize,
        progress: &PipelineReport,
    ) -> Result<Option<Vec<T>>, PipelineError> {
        if !self.resume || progress.completed_steps < step {
            return Ok(None);
        }
        let Some(path) = self.path(STEP_FILES[step - 1]) else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(&path).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
        let items = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| PipelineError::Resume(format!("{}: line {}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<T>, _>>()?;
        log::info!("step {step}: resumed from {}", path.display());
        Ok(Some(items))
    }

    /// Previous progress for a resumed run, checked against the config.
    fn prepare(&self) -> Result<PipelineReport, PipelineError> {
        let fresh = PipelineReport { seed: self.cfg.seed, ..Default::default() };
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(fresh);
        };
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.clone(), source })?;
        let cfg_path = dir.join(RUN_CONFIG_FILE);
        let progress_path = dir.join(PROGRESS_FILE);
        if self.resume && cfg_path.exists() {
            let previous: PipelineConfig = read_json(&cfg_path)?;
            // Concurrency does not change outputs, so it may differ.
            let previous = PipelineConfig { concurrency: self.cfg.concurrency, ..previous };
            if previous != self.cfg {
                return Err(PipelineError::Resume(format!(
                    "{} was written with a different configuration",
                    cfg_path.display()
                )));
            }
            if progress_path.exists() {
                return read_json(&progress_path);
            }
        }
        self.write_json(RUN_CONFIG_FILE, &self.cfg)?;
        Ok(fresh)
    }

    pub fn run(&self) -> Result<PipelineOutput, PipelineError> {
        let mut report = self.prepare()?;
        let seeds: Vec<SeedInstruction> = match self.load_step(1, &report)? {
            Some(x) => x,
            None => {
                let mut stage = InstructionStage::default();
                let x = self.generate_fixed_instructions(&mut stage)?;
                report.instructions = stage;
                report.completed_steps = 1;
                self.save_step(1, &x, &report)?;
                x
            }
        };
        let texts: Vec<TextItem> = match self.load_step(2, &report)? {
            Some(x) => x,
            None => {
                let mut stage = TextStage::default();
                let x = self.generate_background_texts(&seeds, &mut stage)?;
                report.texts = stage;
                report.completed_steps = 2;
                self.save_step(2, &x, &report)?;
                x
            }
        };
        let opens: Vec<OpenItem> = match self.load_step(3, &report)? {
            Some(x) => x,
            None => {
                let mut stage = OpenStage::default();
                let x = self.generate_open_instructions(&texts, &mut stage)?;
                report.open_instructions = stage;
                report.completed_steps = 3;
                self.save_step(3, &x, &report)?;
                x
            }
        };
        let items: Vec<InstructionItem> = match self.load_step(4, &report)? {
            Some(x) => x,
            None => {
                let mut items = self.collect_items(&texts, &opens);
                let mut stage = ParaphraseStage::default();
                self.paraphrase(&mut items, &mut stage)?;
                report.paraphrase = stage;
                report.completed_steps = 4;
                self.save_step(4, &items, &report)?;
                items
            }
        };
        let raw: Vec<RawPair> = match self.load_step(5, &report)? {
            Some(x) => x,
            None => {
                let mut stages = BTreeMap::new();
                let x = self.generate_tables(&items, &mut stages)?;
                report.tables = stages;
                report.completed_steps = 5;
                self.save_step(5, &x, &report)?;
                x
            }
        };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.concurrency)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let (survivors, filter) = pool.install(|| apply_filters(&raw, self.scorer, &self.cfg.thresholds))?;
        report.filter = Some(filter);
        if let Some(path) = self.path(SURVIVORS_FILE) {
            save_instances(&survivors, path)?;
        }
        self.write_json(REPORT_FILE, &report)?;
        Ok(PipelineOutput { survivors, raw, report })
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Resume(format!("{}: {e}", path.display())))
}

/// Paraphrase prompt context for one batch. A batch with a single style
/// names it in the instruction; a mixed batch tags every sentence.
pub fn paraphrase_context(batch: &[InstructionItem]) -> PromptContext {
    let ctx = PromptContext::new().sentences(batch.iter().map(|i| i.instruction.clone()));
    let first = batch.first().map(|i| i.style);
    if batch.iter().all(|i| Some(i.style) == first) {
        ctx.slot("style", first.map_or("", Style::phrase))
    } else {
        ctx.slot("style", MIXED_STYLE_PHRASE).sentence_styles(batch.iter().map(|i| i.style.phrase()))
    }
}

/// Runs the pipeline without checkpoints.
pub fn run_pipeline(
    cfg: PipelineConfig,
    gateway: &Gateway,
    prompts: &PromptLibrary,
    scorer: &dyn EntailmentScorer,
) -> Result<(Vec<Instance>, FilterReport), PipelineError> {
    let out = Pipeline::new(cfg, gateway, prompts, scorer)?.run()?;
    Ok((out.survivors, out.report.filter.unwrap_or_default()))
}
