//! Correlation of automatic metrics with human ratings, and inter-annotator
//! agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{InstanceEval, Scores};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("item {item} has {got} ratings, expected {expected}")]
    UnevenRaterCount { item: usize, expected: usize, got: usize },
    #[error("no ratings for instance(s): {}", .0.join(", "))]
    MissingRatings(Vec<String>),
    #[error("annotator {annotator} rated instance {instance} more than once")]
    DuplicateRating { instance: String, annotator: String },
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pearson,
    Spearman,
    Kendall,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pearson, Method::Spearman, Method::Kendall];
}

fn check(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::Input("series contain non-finite values".into()));
    }
    Ok(())
}

/// Correlation coefficient, or `None` when it is undefined (a constant
/// series, or all pairs tied for Kendall).
pub fn correlation(x: &[f64], y: &[f64], method: Method) -> Result<Option<f64>, StatsError> {
    check(x, y)?;
    Ok(match method {
        Method::Pearson => pearson(x, y),
        Method::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
        Method::Kendall => kendall_tau_b(x, y),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            if dx == 0 {
                ties_x += 1;
            }
            if dy == 0 {
                ties_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

/// Fleiss' kappa over an items × categories matrix of rating counts. `None`
/// when chance agreement is 1 (every rating in one category).
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<Option<f64>, StatsError> {
    if counts.is_empty() {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    let raters: usize = counts[0].iter().sum();
    for (item, row) in counts.iter().enumerate() {
        let got: usize = row.iter().sum();
        if got != raters || row.len() != counts[0].len() {
            return Err(StatsError::UnevenRaterCount { item, expected: raters, got });
        }
    }
    if raters < 2 {
        return Err(StatsError::TooShort { needed: 2, got: raters });
    }
    let n_items = counts.len() as f64;
    let n = raters as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_items;
    let p_e: f64 = (0..counts[0].len())
        .map(|j| {
            let p_j = counts.iter().map(|r| r[j] as f64).sum::<f64>() / (n_items * n);
            p_j * p_j
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(None);
    }
    Ok(Some((p_bar - p_e) / (1.0 - p_e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeaderRating {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContentRating {
    A,
    B,
    C,
    D,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRating {
    pub instance_id: String,
    pub annotator_id: String,
    pub header_rating: HeaderRating,
    pub content_rating: ContentRating,
}

/// Numeric values of the rating letters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingScale {
    pub header: [f64; 3],
    pub content: [f64; 4],
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { header: [3.0, 2.0, 1.0], content: [4.0, 3.0, 2.0, 1.0] }
    }
}

impl RatingScale {
    pub fn header_value(&self, r: HeaderRating) -> f64 {
        self.header[r as usize]
    }

    pub fn content_value(&self, r: ContentRating) -> f64 {
        self.content[r as usize]
    }
}

pub fn load_ratings(path: impl AsRef<Path>) -> Result<Vec<HumanRating>, StatsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| StatsError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StatsError::Input(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn check_unique(ratings: &[HumanRating]) -> Result<(), StatsError> {
    let mut seen = BTreeSet::new();
    for r in ratings {
        if !seen.insert((&r.instance_id, &r.annotator_id)) {
            return Err(StatsError::DuplicateRating {
                instance: r.instance_id.clone(),
                annotator: r.annotator_id.clone(),
            });
        }
    }
    Ok(())
}

/// Mean numeric header and content rating per instance.
pub fn average_ratings(
    ratings: &[HumanRating],
    scale: &RatingScale,
) -> Result<BTreeMap<String, (f64, f64)>, StatsError> {
    check_unique(ratings)?;
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for r in ratings {
        let e = sums.entry(r.instance_id.clone()).or_default();
        e.0 += scale.header_value(r.header_rating);
        e.1 += scale.content_value(r.content_rating);
        e.2 += 1;
    }
    Ok(sums.into_iter().map(|(k, (h, c, n))| (k, (h / n as f64, c / n as f64))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Header,
    Content,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    pub facet: Facet,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_instances: usize,
    pub metrics: Vec<MetricCorrelation>,
}

impl CorrelationReport {
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
        let mut out =
            format!("{:<22} {:<8} {:>10} {:>10} {:>10}\n", "metric", "facet", "pearson", "spearman", "kendall");
        for m in &self.metrics {
            let facet = match m.facet {
                Facet::Header => "header",
                Facet::Content => "content",
            };
            out.push_str(&format!(
                "{:<22} {:<8} {:>10} {:>10} {:>10}\n",
                m.metric,
                facet,
                fmt(m.pearson),
                fmt(m.spearman),
                fmt(m.kendall)
            ));
        }
        out.push_str(&format!("instances: {}\n", self.n_instances));
        out
    }
}

/// Correlates every metric with the annotator-averaged rating of its facet:
/// header metrics with header ratings, content metrics with content ratings.
pub fn correlate_metrics(
    evals: &[InstanceEval],
    ratings: &[HumanRating],
    scale: &RatingScale,
) -> Result<CorrelationReport, StatsError> {
    let avg = average_ratings(ratings, scale)?;
    let missing: Vec<String> =
        evals.iter().filter(|e| !avg.contains_key(&e.meta.id)).map(|e| e.meta.id.clone()).collect();
    if !missing.is_empty() {
        return Err(StatsError::MissingRatings(missing));
    }
    let header: Vec<f64> = evals.iter().map(|e| avg[&e.meta.id].0).collect();
    let content: Vec<f64> = evals.iter().map(|e| avg[&e.meta.id].1).collect();
    let mut metrics = Vec::new();
    for (k, name) in Scores::NAMES.iter().enumerate() {
        let x: Vec<f64> = evals.iter().map(|e| e.scores.values()[k]).collect();
        let (facet, y) = if name.starts_with("header") { (Facet::Header, &header) } else { (Facet::Content, &content) };
        metrics.push(MetricCorrelation {
            metric: name.to_string(),
            facet,
            pearson: correlation(&x, y, Method::Pearson)?,
            spearman: correlation(&x, y, Method::Spearman)?,
            kendall: correlation(&x, y, Method::Kendall)?,
        });
    }
    Ok(CorrelationReport { n_instances: evals.len(), metrics })
}

/// Items × categories rating counts for one facet, items in id order.
pub fn rating_counts(ratings: &[HumanRating], facet: Facet) -> Result<Vec<Vec<usize>>, StatsError> {
    check_unique(ratings)?;
    let width = match facet {
        Facet::Header => 3,
        Facet::Content => 4,
    };
    let mut by_item: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in ratings {
        let row = by_item.entry(&r.instance_id).or_insert_with(|| vec![0; width]);
        let k = match facet {
            Facet::Header => r.header_rating as usize,
            Facet::Content => r.content_rating as usize,
        };
        row[k] += 1;
    }
    Ok(by_item.into_values().collect())
}
