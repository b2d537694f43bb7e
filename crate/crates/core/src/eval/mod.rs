//! Table evaluation: header exact and soft F1, content exact, semantic and
//! ROUGE-L F1, and grouped aggregation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Category, Difficulty, Instance, SourceType};
use crate::table::{parse_table, Table};

pub mod assign;
pub mod embed;

pub use assign::{greedy_assignment, max_weight_assignment};
pub use embed::{cosine, EmbedError, Embedder, HashingEmbedder, SimilarityCache};

pub const CELL_SEPARATOR: &str = "<c>";
pub const ROW_SEPARATOR: &str = "<r>";

/// Weight of column content agreement when aligning columns. Only breaks
/// ties between equally similar headers.
const CONTENT_TIE_BREAK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{path}: line {line}: {message}")]
    Predictions { path: String, line: usize, message: String },
    #[error("duplicate prediction for instance {0}")]
    DuplicatePrediction(String),
    #[error("gold instance {0} has no table")]
    MissingGold(String),
    #[error("{0}")]
    Io(String),
}

/// Trim, lowercase and collapse internal whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn f1_from_tp(tp: f64, n_pred: usize, n_gold: usize) -> f64 {
    if n_pred == 0 && n_gold == 0 {
        return 1.0;
    }
    if n_pred == 0 || n_gold == 0 {
        return 0.0;
    }
    (2.0 * tp / (n_pred + n_gold) as f64).clamp(0.0, 1.0)
}

/// Multiset F1 over normalized strings.
pub fn exact_match_f1<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for g in gold {
        *counts.entry(normalize(g.as_ref())).or_default() += 1;
    }
    let mut tp = 0usize;
    for p in pred {
        if let Some(n) = counts.get_mut(&normalize(p.as_ref())) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    f1_from_tp(tp as f64, pred.len(), gold.len())
}

/// Similarity-weighted F1 where the true-positive mass is the value of the
/// optimal one-to-one assignment between predicted and gold strings.
pub fn soft_match_f1<S: AsRef<str>, E: Embedder + ?Sized>(
    pred: &[S],
    gold: &[S],
    embedder: &E,
) -> Result<f64, EmbedError> {
    let p: Vec<String> = pred.iter().map(|s| normalize(s.as_ref())).collect();
    let g: Vec<String> = gold.iter().map(|s| normalize(s.as_ref())).collect();
    let cache = SimilarityCache::build(embedder, p.iter().chain(&g).map(String::as_str))?;
    Ok(soft_match_with(&p, &g, &cache))
}

fn soft_match_with(p: &[String], g: &[String], cache: &SimilarityCache) -> f64 {
    if p.is_empty() || g.is_empty() {
        return f1_from_tp(0.0, p.len(), g.len());
    }
    let w: Vec<Vec<f64>> = p.iter().map(|a| g.iter().map(|b| cache.similarity(a, b)).collect()).collect();
    let (tp, _) = max_weight_assignment(&w);
    f1_from_tp(tp, p.len(), g.len())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_f1<T: PartialEq>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let l = lcs_len(pred, gold) as f64;
    let p = l / pred.len() as f64;
    let r = l / gold.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Content cells row-major, `<c>` between cells and `<r>` between rows,
/// split on whitespace.
pub fn linearize_content(t: &Table) -> Vec<String> {
    let rows: Vec<String> = t.rows().iter().map(|r| r.join(&format!(" {CELL_SEPARATOR} "))).collect();
    rows.join(&format!(" {ROW_SEPARATOR} ")).split_whitespace().map(String::from).collect()
}

/// Grouping metadata of an evaluated instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: String,
    pub difficulty: Option<Difficulty>,
    pub category: Category,
    pub source_type: SourceType,
}

impl From<&Instance> for InstanceMeta {
    fn from(i: &Instance) -> Self {
        Self { id: i.id.clone(), difficulty: i.difficulty, category: i.category, source_type: i.source_type }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub header_exact_f1: f64,
    pub header_soft_f1: f64,
    pub content_exact_f1: f64,
    pub content_semantic_f1: f64,
    pub content_rouge_l_f1: f64,
}

impl Scores {
    pub const NAMES: [&'static str; 5] =
        ["header_exact_f1", "header_soft_f1", "content_exact_f1", "content_semantic_f1", "content_rouge_l_f1"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.header_exact_f1,
            self.header_soft_f1,
            self.content_exact_f1,
            self.content_semantic_f1,
            self.content_rouge_l_f1,
        ]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            header_exact_f1: v[0],
            header_soft_f1: v[1],
            content_exact_f1: v[2],
            content_semantic_f1: v[3],
            content_rouge_l_f1: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEval {
    #[serde(flatten)]
    pub meta: InstanceMeta,
    /// False when the prediction had no parseable table.
    pub valid: bool,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Columns of `pred` aligned to columns of `gold`, by header similarity
/// with content agreement as tie-break.
pub fn align_columns(pred: &Table, gold: &Table, cache: &SimilarityCache) -> Vec<Option<usize>> {
    let ph: Vec<String> = pred.header().iter().map(|h| normalize(h)).collect();
    let gh: Vec<String> = gold.header().iter().map(|h| normalize(h)).collect();
    let rows = pred.n_rows().min(gold.n_rows());
    let w: Vec<Vec<f64>> = (0..ph.len())
        .map(|i| {
            (0..gh.len())
                .map(|j| {
                    let agree = if rows == 0 {
                        0.0
                    } else {
                        (0..rows).filter(|&r| normalize(&pred.rows()[r][i]) == normalize(&gold.rows()[r][j])).count()
                            as f64
                            / rows as f64
                    };
                    cache.similarity(&ph[i], &gh[j]) + CONTENT_TIE_BREAK * agree
                })
                .collect()
        })
        .collect();
    max_weight_assignment(&w).1
}

fn strings_of(t: &Table) -> impl Iterator<Item = String> + '_ {
    t.header().iter().chain(t.rows().iter().flatten()).map(|s| normalize(s))
}

/// Scores a parsed prediction against a gold table.
pub fn score_tables<E: Embedder + ?Sized>(pred: &Table, gold: &Table, embedder: &E) -> Result<Scores, EmbedError> {
    let all: Vec<String> = strings_of(pred).chain(strings_of(gold)).collect();
    let cache = SimilarityCache::build(embedder, all.iter().map(String::as_str))?;
    let ph: Vec<String> = pred.header().iter().map(|h| normalize(h)).collect();
    let gh: Vec<String> = gold.header().iter().map(|h| normalize(h)).collect();

    let columns = align_columns(pred, gold, &cache);
    let rows = pred.n_rows().min(gold.n_rows());
    let (mut exact_tp, mut soft_tp) = (0usize, 0.0f64);
    for (i, j) in columns.iter().enumerate() {
        let Some(j) = *j else { continue };
        for r in 0..rows {
            let a = normalize(&pred.rows()[r][i]);
            let b = normalize(&gold.rows()[r][j]);
            if a == b {
                exact_tp += 1;
            }
            soft_tp += cache.similarity(&a, &b);
        }
    }
    let n_pred = pred.n_rows() * pred.n_cols();
    let n_gold = gold.n_rows() * gold.n_cols();
    Ok(Scores {
        header_exact_f1: exact_match_f1(&ph, &gh),
        header_soft_f1: soft_match_with(&ph, &gh, &cache),
        content_exact_f1: f1_from_tp(exact_tp as f64, n_pred, n_gold),
        content_semantic_f1: f1_from_tp(soft_tp, n_pred, n_gold),
        content_rouge_l_f1: rouge_l_f1(&linearize_content(pred), &linearize_content(gold)),
    })
}

/// Scores a raw prediction. Output without a parseable table scores zero on
/// every metric and is marked invalid.
pub fn evaluate_instance<E: Embedder + ?Sized>(
    pred_output: &str,
    gold: &Table,
    meta: InstanceMeta,
    embedder: &E,
) -> Result<InstanceEval, EmbedError> {
    match parse_table(pred_output) {
        Ok(pred) => Ok(InstanceEval { meta, valid: true, scores: score_tables(&pred, gold, embedder)? }),
        Err(_) => Ok(InstanceEval { meta, valid: false, scores: Scores::default() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub group: String,
    pub count: usize,
    /// `None` for an empty group.
    pub means: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub groups: Vec<GroupMeans>,
    pub invalid_predictions: Vec<String>,
    pub missing_predictions: Vec<String>,
}

pub const GROUPS: [&str; 8] = ["easy", "medium", "hard", "fixed", "open", "generate", "retrieve", "overall"];

fn in_group(meta: &InstanceMeta, group: &str) -> bool {
    match group {
        "overall" => true,
        "fixed" | "open" => meta.category.as_str() == group,
        "generate" | "retrieve" => meta.source_type.as_str() == group,
        _ => meta.difficulty.is_some_and(|d| d.as_str() == group),
    }
}

/// Unweighted means of every metric per group and overall.
pub fn aggregate(evals: &[InstanceEval]) -> Result<EvalReport, EvalError> {
    if evals.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let groups = GROUPS
        .iter()
        .map(|g| {
            let members: Vec<&InstanceEval> = evals.iter().filter(|e| in_group(&e.meta, g)).collect();
            let means = (!members.is_empty()).then(|| {
                let mut sums = [0.0; 5];
                for m in &members {
                    for (s, v) in sums.iter_mut().zip(m.scores.values()) {
                        *s += v;
                    }
                }
                Scores::from_values(sums.map(|s| s / members.len() as f64))
            });
            GroupMeans { group: g.to_string(), count: members.len(), means }
        })
        .collect();
    Ok(EvalReport {
        groups,
        invalid_predictions: evals.iter().filter(|e| !e.valid).map(|e| e.meta.id.clone()).collect(),
        missing_predictions: Vec::new(),
    })
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<&GroupMeans> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Metrics as rows and groups as columns, in percent with two decimals.
    pub fn render(&self) -> String {
        let mut out = format!("{:<22}", "metric");
        for g in &self.groups {
            out.push_str(&format!("{:>10}", g.group));
        }
        out.push('\n');
        out.push_str(&format!("{:<22}", "n"));
        for g in &self.groups {
            out.push_str(&format!("{:>10}", g.count));
        }
        out.push('\n');
        for (k, name) in Scores::NAMES.iter().enumerate() {
            out.push_str(&format!("{name:<22}"));
            for g in &self.groups {
                match &g.means {
                    Some(m) => out.push_str(&format!("{:>10.2}", m.values()[k] * 100.0)),
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            out.push('\n');
        }
        if !self.invalid_predictions.is_empty() {
            out.push_str(&format!("unparseable predictions: {}\n", self.invalid_predictions.len()));
        }
        if !self.missing_predictions.is_empty() {
            out.push_str(&format!("missing predictions: {}\n", self.missing_predictions.len()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub output: String,
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| EvalError::Predictions {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Scores predictions against gold instances (in parallel on the current
/// rayon pool). Gold instances without a prediction score zero and are
/// listed in the report; predictions for unknown ids are ignored.
pub fn evaluate_predictions<E: Embedder + ?Sized>(
    preds: &[Prediction],
    gold: &[Instance],
    embedder: &E,
) -> Result<(Vec<InstanceEval>, EvalReport), EvalError> {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in preds {
        if by_id.insert(&p.id, &p.output).is_some() {
            return Err(EvalError::DuplicatePrediction(p.id.clone()));
        }
    }
    let known: HashSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let unknown = preds.iter().filter(|p| !known.contains(p.id.as_str())).count();
    if unknown > 0 {
        log::warn!("ignoring {unknown} prediction(s) for unknown instance ids");
    }
    let evals: Vec<InstanceEval> = gold
        .par_iter()
        .map(|g| {
            let table = g.table.as_ref().ok_or_else(|| EvalError::MissingGold(g.id.clone()))?;
            match by_id.get(g.id.as_str()) {
                Some(output) => Ok(evaluate_instance(output, table, InstanceMeta::from(g), embedder)?),
                None => Ok(InstanceEval { meta: InstanceMeta::from(g), valid: false, scores: Scores::default() }),
            }
        })
        .collect::<Result<_, EvalError>>()?;
    let mut report = aggregate(&evals)?;
    report.missing_predictions =
        gold.iter().filter(|g| !by_id.contains_key(g.id.as_str())).map(|g| g.id.clone()).collect();
    let missing: HashSet<&String> = report.missing_predictions.iter().collect();
    report.invalid_predictions.retain(|id| !missing.contains(id));
    Ok((evals, report))
}

/// Per-metric score columns, keyed by metric name.
pub fn metric_columns(evals: &[InstanceEval]) -> BTreeMap<&'static str, Vec<f64>> {
    let mut out: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for e in evals {
        for (name, v) in Scores::NAMES.iter().zip(e.scores.values()) {
            out.entry(name).or_default().push(v);
        }
    }
    out
}
