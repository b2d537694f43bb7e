//! Four-stage quality filter for generated tables: validity,
//! informativeness, consistency and faithfulness, applied in that order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Category, Instance, SourceType, Variant};
use crate::synthesis::RawPair;
use crate::table::{is_not_available, parse_table, Table, TableError, TableShape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("scorer returned an invalid response: {0}")]
    InvalidResponse(String),
}

/// Premise/hypothesis entailment scorer returning a fraction in `[0, 1]`.
pub trait EntailmentScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError>;

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScorerError> {
        pairs.iter().map(|(p, h)| self.score(p, h)).collect()
    }
}

impl<S: EntailmentScorer + ?Sized> EntailmentScorer for &S {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        (**self).score(premise, hypothesis)
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_batch(pairs)
    }
}

impl<S: EntailmentScorer + ?Sized> EntailmentScorer for Box<S> {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        (**self).score(premise, hypothesis)
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_batch(pairs)
    }
}

/// Words of the hypothesis templates, ignored when counting overlap.
pub const HYPOTHESIS_STOPWORDS: [&str; 5] = ["extract", "from", "the", "text", "is"];

/// Lowercased alphanumeric runs.
pub fn content_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Offline entailment stand-in: the fraction of the hypothesis' content
/// tokens (multiset, template words removed) that also occur in the premise.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalEntailment;

impl LexicalEntailment {
    pub fn score_pair(premise: &str, hypothesis: &str) -> f64 {
        let hyp: Vec<String> =
            content_tokens(hypothesis).into_iter().filter(|t| !HYPOTHESIS_STOPWORDS.contains(&t.as_str())).collect();
        if hyp.is_empty() {
            return 0.0;
        }
        let mut available: HashMap<String, usize> = HashMap::new();
        for t in content_tokens(premise) {
            *available.entry(t).or_default() += 1;
        }
        let mut hits = 0usize;
        for t in &hyp {
            if let Some(n) = available.get_mut(t) {
                if *n > 0 {
                    *n -= 1;
                    hits += 1;
                }
            }
        }
        (hits as f64 / hyp.len() as f64).clamp(0.0, 1.0)
    }
}

impl EntailmentScorer for LexicalEntailment {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        Ok(Self::score_pair(premise, hypothesis))
    }
}

/// One recorded scorer call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedScore {
    pub premise: String,
    pub hypothesis: String,
    pub score: f64,
}

/// Replays previously recorded scores. Unknown pairs are an error.
#[derive(Debug, Clone, Default)]
pub struct RecordedScorer {
    scores: HashMap<(String, String), f64>,
}

impl RecordedScorer {
    pub fn new(records: impl IntoIterator<Item = RecordedScore>) -> Self {
        Self { scores: records.into_iter().map(|r| ((r.premise, r.hypothesis), r.score)).collect() }
    }

    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self, FilterError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FilterError::Io(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordedScore = serde_json::from_str(line)
                .map_err(|e| FilterError::Io(format!("{}: line {}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        Ok(Self::new(records))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl EntailmentScorer for RecordedScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        self.scores
            .get(&(premise.to_string(), hypothesis.to_string()))
            .copied()
            .ok_or_else(|| ScorerError::Unavailable(format!("no recorded score for hypothesis {hypothesis:?}")))
    }
}

/// Uses `primary` and switches to `fallback` for any call where the primary
/// scorer is unavailable.
pub struct FallbackScorer<P, F> {
    primary: P,
    fallback: F,
    warned: Mutex<bool>,
}

impl<P, F> FallbackScorer<P, F> {
    pub fn new(primary: P, fallback: F) -> Self {
        Self { primary, fallback, warned: Mutex::new(false) }
    }

    fn note(&self, err: &ScorerError) {
        let mut warned = self.warned.lock().unwrap_or_else(|e| e.into_inner());
        if !*warned {
            log::warn!("{err}; using the fallback scorer");
            *warned = true;
        }
    }
}

impl<P: EntailmentScorer, F: EntailmentScorer> EntailmentScorer for FallbackScorer<P, F> {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        match self.primary.score(premise, hypothesis) {
            Err(e @ ScorerError::Unavailable(_)) => {
                self.note(&e);
                self.fallback.score(premise, hypothesis)
            }
            other => other,
        }
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScorerError> {
        match self.primary.score_batch(pairs) {
            Err(e @ ScorerError::Unavailable(_)) => {
                self.note(&e);
                self.fallback.score_batch(pairs)
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub min_rows_plus_cols_exclusive: usize,
    pub min_cols_exclusive: usize,
    pub max_na_exclusive: usize,
    pub consistency_threshold: f64,
    pub faithfulness_threshold: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_rows_plus_cols_exclusive: 3,
            min_cols_exclusive: 1,
            max_na_exclusive: 4,
            consistency_threshold: 0.5,
            faithfulness_threshold: 0.5,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, v) in [
            ("consistency_threshold", self.consistency_threshold),
            ("faithfulness_threshold", self.faithfulness_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FilterError::Thresholds(format!("{name} must be within [0, 1], got {v}")));
            }
        }
        if self.max_na_exclusive == 0 {
            return Err(FilterError::Thresholds("max_na_exclusive must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Validity,
    Informativeness,
    Consistency,
    Faithfulness,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accepted(Table),
    Rejected(Rejection),
}

pub fn check_validity(raw_output: &str) -> Result<Table, TableError> {
    parse_table(raw_output)
}

pub fn check_informativeness(shape: &TableShape, th: &FilterThresholds) -> bool {
    shape.n_rows + shape.n_cols > th.min_rows_plus_cols_exclusive
        && shape.n_cols > th.min_cols_exclusive
        && shape.n_na < th.max_na_exclusive
}

/// A mean score passes only when strictly above the threshold.
pub fn passes_threshold(mean: f64, threshold: f64) -> bool {
    mean > threshold
}

pub fn consistency_hypothesis(header: &str) -> String {
    format!("extract {header} from the text")
}

pub fn faithfulness_hypothesis(header: &str, cell: &str) -> String {
    format!("The {header} is {cell}")
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn checked_scores(scores: Vec<f64>, expected: usize) -> Result<Vec<f64>, ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::InvalidResponse(format!("expected {expected} score(s), got {}", scores.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ScorerError::InvalidResponse(format!("score {bad} outside [0, 1]")));
    }
    Ok(scores)
}

/// Mean entailment of "extract H from the text" over all headers, with the
/// instruction as premise. No headers scores 0.
pub fn consistency_score<S: EntailmentScorer + ?Sized>(
    instruction: &str,
    headers: &[String],
    scorer: &S,
) -> Result<f64, ScorerError> {
    let pairs: Vec<(String, String)> =
        headers.iter().map(|h| (instruction.to_string(), consistency_hypothesis(h))).collect();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok(mean(&checked_scores(scorer.score_batch(&pairs)?, pairs.len())?))
}

/// Hypotheses "The H is C" for every content cell that is neither `N/A`
/// nor empty.
pub fn faithfulness_hypotheses(t: &Table) -> Vec<String> {
    t.cells()
        .filter(|(_, c)| !c.trim().is_empty() && !is_not_available(c))
        .map(|(h, c)| faithfulness_hypothesis(h, c))
        .collect()
}

/// Mean entailment of the cell hypotheses with the text as premise. A table
/// without any scorable cell scores 0.
pub fn faithfulness_score<S: EntailmentScorer + ?Sized>(text: &str, t: &Table, scorer: &S) -> Result<f64, ScorerError> {
    let pairs: Vec<(String, String)> = faithfulness_hypotheses(t).into_iter().map(|h| (text.to_string(), h)).collect();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok(mean(&checked_scores(scorer.score_batch(&pairs)?, pairs.len())?))
}

/// Runs the four checks in order and stops at the first failure.
/// Consistency is only checked for fixed instructions.
pub fn filter_one<S: EntailmentScorer + ?Sized>(
    pair: &RawPair,
    scorer: &S,
    th: &FilterThresholds,
) -> Result<Verdict, ScorerError> {
    let table = match check_validity(&pair.raw_table_output) {
        Ok(t) => t,
        Err(_) => return Ok(Verdict::Rejected(Rejection::Validity)),
    };
    if !check_informativeness(&table.shape(), th) {
        return Ok(Verdict::Rejected(Rejection::Informativeness));
    }
    if pair.category == Category::Fixed {
        let s = consistency_score(&pair.instruction, table.header(), scorer)?;
        if !passes_threshold(s, th.consistency_threshold) {
            return Ok(Verdict::Rejected(Rejection::Consistency));
        }
    }
    let s = faithfulness_score(&pair.text, &table, scorer)?;
    if !passes_threshold(s, th.faithfulness_threshold) {
        return Ok(Verdict::Rejected(Rejection::Faithfulness));
    }
    Ok(Verdict::Accepted(table))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub raw_count: usize,
    pub rejected_validity: usize,
    pub rejected_informativeness: usize,
    pub rejected_consistency: usize,
    pub rejected_faithfulness: usize,
    pub survivors: usize,
}

impl FilterCounts {
    pub fn rejected(&self) -> usize {
        self.rejected_validity + self.rejected_informativeness + self.rejected_consistency + self.rejected_faithfulness
    }

    /// `raw_count = survivors + rejections`.
    pub fn is_balanced(&self) -> bool {
        self.raw_count == self.survivors + self.rejected()
    }

    fn record(&mut self, verdict: &Verdict) {
        self.raw_count += 1;
        match verdict {
            Verdict::Accepted(_) => self.survivors += 1,
            Verdict::Rejected(Rejection::Validity) => self.rejected_validity += 1,
            Verdict::Rejected(Rejection::Informativeness) => self.rejected_informativeness += 1,
            Verdict::Rejected(Rejection::Consistency) => self.rejected_consistency += 1,
            Verdict::Rejected(Rejection::Faithfulness) => self.rejected_faithfulness += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    #[serde(flatten)]
    pub totals: FilterCounts,
    pub by_variant: BTreeMap<Variant, FilterCounts>,
}

impl FilterReport {
    pub fn record(&mut self, variant: Variant, verdict: &Verdict) {
        self.totals.record(verdict);
        self.by_variant.entry(variant).or_default().record(verdict);
    }

    pub fn is_balanced(&self) -> bool {
        self.totals.is_balanced() && self.by_variant.values().all(FilterCounts::is_balanced)
    }

    pub fn render(&self) -> String {
        let mut rows = vec![("total".to_string(), self.totals)];
        rows.extend(self.by_variant.iter().map(|(v, c)| (v.as_str().to_string(), *c)));
        let mut out = format!(
            "{:<8} {:>8} {:>9} {:>16} {:>12} {:>13} {:>10}\n",
            "variant", "raw", "validity", "informativeness", "consistency", "faithfulness", "survivors"
        );
        for (name, c) in rows {
            out.push_str(&format!(
                "{:<8} {:>8} {:>9} {:>16} {:>12} {:>13} {:>10}\n",
                name,
                c.raw_count,
                c.rejected_validity,
                c.rejected_informativeness,
                c.rejected_consistency,
                c.rejected_faithfulness,
                c.survivors
            ));
        }
        out
    }
}

/// Turns an accepted raw pair into a dataset instance.
pub fn to_instance(pair: &RawPair, table: Table) -> Instance {
    Instance {
        id: pair.id.clone(),
        instruction: pair.instruction.clone(),
        text: pair.text.clone(),
        table: Some(table),
        domain: pair.domain.clone(),
        category: pair.category,
        source_type: SourceType::Generate,
        difficulty: None,
        variant: pair.variant,
        explanation: match pair.variant {
            Variant::Cot => pair.explanation.clone(),
            Variant::Direct => None,
        },
    }
}

/// Filters every raw pair (in parallel on the current rayon pool) and returns
/// the survivors in input order with the tallies.
pub fn apply_filters<S: EntailmentScorer + ?Sized>(
    raw: &[RawPair],
    scorer: &S,
    th: &FilterThresholds,
) -> Result<(Vec<Instance>, FilterReport), FilterError> {
    th.validate()?;
    let verdicts: Vec<Verdict> = raw.par_iter().map(|p| filter_one(p, scorer, th)).collect::<Result<_, _>>()?;
    let mut report = FilterReport::default();
    let mut survivors = Vec::new();
    for (pair, verdict) in raw.iter().zip(verdicts) {
        report.record(pair.variant, &verdict);
        if let Verdict::Accepted(table) = verdict {
            survivors.push(to_instance(pair, table));
        }
    }
    Ok((survivors, report))
}

/// Raw pair view of an instance with a table, so stored instances can be
/// filtered again.
pub fn from_instance(inst: &Instance) -> Option<RawPair> {
    let table = inst.table.as_ref()?;
    Some(RawPair {
        id: inst.id.clone(),
        instruction: inst.instruction.clone(),
        domain: inst.domain.clone(),
        text: inst.text.clone(),
        category: inst.category,
        style: None,
        paraphrased: false,
        header_leak: false,
        raw_table_output: table.to_markdown(),
        explanation: inst.explanation.clone(),
        variant: inst.variant,
    })
}
