//! Instance records, JSONL persistence and dataset statistics.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{parse_table, Table, TableError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: line {line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
    #[error("instance {id}: gold table: {source}")]
    TableParse {
        id: String,
        #[source]
        source: TableError,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Open,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceType {
    Retrieve,
    Generate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Direct,
    Cot,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Open => "open",
            Category::Fixed => "fixed",
        }
    }
}

impl SourceType {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceType::Retrieve => "retrieve",
            SourceType::Generate => "generate",
        }
    }
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Direct => "direct",
            Variant::Cot => "cot",
        }
    }
}

/// One dataset record: an instruction, its background text and the gold
/// table, with the annotation metadata used for grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub instruction: String,
    pub text: String,
    pub table: Option<Table>,
    pub domain: String,
    pub category: Category,
    pub source_type: SourceType,
    pub difficulty: Option<Difficulty>,
    pub variant: Variant,
    pub explanation: Option<String>,
}

/// On-disk form of [`Instance`]. The table is kept as canonical markdown.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    instruction: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<String>,
    domain: String,
    category: Category,
    source_type: SourceType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<Difficulty>,
    variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
}

impl From<&Instance> for InstanceRecord {
    fn from(inst: &Instance) -> Self {
        Self {
            id: inst.id.clone(),
            instruction: inst.instruction.clone(),
            text: inst.text.clone(),
            table: inst.table.as_ref().map(Table::to_markdown),
            domain: inst.domain.clone(),
            category: inst.category,
            source_type: inst.source_type,
            difficulty: inst.difficulty,
            variant: inst.variant,
            explanation: inst.explanation.clone(),
        }
    }
}

impl Instance {
    /// Serializes to the single-line JSON record format.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&InstanceRecord::from(self)).expect("instance records always serialize")
    }
}

/// Parses one JSONL line. `line` is 1-based and only used in error messages.
pub fn parse_instance_line(path: &Path, line: usize, text: &str) -> Result<Instance, DatasetError> {
    let schema = |message: String| DatasetError::Schema { path: path.to_path_buf(), line, message };
    let rec: InstanceRecord = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    if rec.explanation.is_some() && rec.variant != Variant::Cot {
        return Err(schema(format!(
            "instance {}: explanation present but variant is {}",
            rec.id,
            rec.variant.as_str()
        )));
    }
    let table = match rec.table.as_deref() {
        Some(md) => Some(parse_table(md).map_err(|source| DatasetError::TableParse { id: rec.id.clone(), source })?),
        None => None,
    };
    Ok(Instance {
        id: rec.id,
        instruction: rec.instruction,
        text: rec.text,
        table,
        domain: rec.domain,
        category: rec.category,
        source_type: rec.source_type,
        difficulty: rec.difficulty,
        variant: rec.variant,
        explanation: rec.explanation,
    })
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<Instance>, DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_instance_line(path, idx + 1, &line)?);
    }
    Ok(out)
}

/// Writes `items` as JSON lines through a temporary file that atomically
/// replaces `path`.
pub fn write_jsonl_atomic<T>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = T>,
    mut encode: impl FnMut(T) -> String,
) -> std::io::Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        for item in items {
            w.write_all(encode(item).as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn save_instances(xs: &[Instance], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    write_jsonl_atomic(path, xs, Instance::to_json_line)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsCounts {
    pub instructions: usize,
    pub open: usize,
    pub fixed: usize,
    pub texts: usize,
    pub retrieved: usize,
    pub generated: usize,
    pub domains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsAverages {
    pub instruction_words: f64,
    pub text_words: f64,
    pub table_cells: f64,
    pub table_rows: f64,
    pub table_columns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub counts: StatsCounts,
    pub averages: StatsAverages,
    /// Instances per difficulty level, in easy/medium/hard order.
    pub difficulty: BTreeMap<Difficulty, usize>,
    /// Instances carrying no difficulty annotation.
    pub difficulty_unlabeled: usize,
    /// Instances that have a gold table; the table averages are taken over these.
    pub with_table: usize,
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Corpus statistics. Texts and their source types are counted over distinct
/// text strings, since several instructions can share one background text.
pub fn dataset_statistics(xs: &[Instance]) -> Result<StatsReport, DatasetError> {
    if xs.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = xs.len();
    let open = xs.iter().filter(|x| x.category == Category::Open).count();

    let mut seen_texts = HashSet::new();
    let (mut retrieved, mut generated, mut text_words) = (0usize, 0usize, 0usize);
    for x in xs {
        if seen_texts.insert(x.text.as_str()) {
            text_words += word_count(&x.text);
            match x.source_type {
                SourceType::Retrieve => retrieved += 1,
                SourceType::Generate => generated += 1,
            }
        }
    }
    let domains: HashSet<&str> = xs.iter().map(|x| x.domain.as_str()).collect();

    let shapes: Vec<_> = xs.iter().filter_map(|x| x.table.as_ref().map(Table::shape)).collect();
    let mean = |sum: usize, count: usize| if count == 0 { 0.0 } else { sum as f64 / count as f64 };

    let mut difficulty: BTreeMap<Difficulty, usize> = Difficulty::ALL.iter().map(|d| (*d, 0)).collect();
    let mut difficulty_unlabeled = 0;
    for x in xs {
        match x.difficulty {
            Some(d) => *difficulty.entry(d).or_default() += 1,
            None => difficulty_unlabeled += 1,
        }
    }

    Ok(StatsReport {
        counts: StatsCounts {
            instructions: n,
            open,
            fixed: n - open,
            texts: seen_texts.len(),
            retrieved,
            generated,
            domains: domains.len(),
        },
        averages: StatsAverages {
            instruction_words: mean(xs.iter().map(|x| word_count(&x.instruction)).sum(), n),
            text_words: mean(text_words, seen_texts.len()),
            table_cells: mean(shapes.iter().map(|s| s.n_cells()).sum(), shapes.len()),
            table_rows: mean(shapes.iter().map(|s| s.n_rows).sum(), shapes.len()),
            table_columns: mean(shapes.iter().map(|s| s.n_cols).sum(), shapes.len()),
        },
        difficulty,
        difficulty_unlabeled,
        with_table: shapes.len(),
    })
}

impl StatsReport {
    /// Plain-text rendering in the layout of a dataset statistics table.
    pub fn render(&self) -> String {
        let c = &self.counts;
        let a = &self.averages;
        let mut rows = vec![
            ("# Instruction".to_string(), c.instructions.to_string()),
            ("  - # Open Instruction".into(), c.open.to_string()),
            ("  - # Fixed Instruction".into(), c.fixed.to_string()),
            ("# Text".into(), c.texts.to_string()),
            ("  - # Retrieved Text".into(), c.retrieved.to_string()),
            ("  - # Generated Text".into(), c.generated.to_string()),
            ("# Domain".into(), c.domains.to_string()),
            ("# Ave. Instr. Len.".into(), format!("{:.1}", a.instruction_words)),
            ("# Ave. Text Len.".into(), format!("{:.1}", a.text_words)),
            ("# Ave. Table Cell".into(), format!("{:.1}", a.table_cells)),
            ("# Ave. Table Row".into(), format!("{:.1}", a.table_rows)),
            ("# Ave. Table Column".into(), format!("{:.1}", a.table_columns)),
        ];
        for d in Difficulty::ALL {
            let label = match d {
                Difficulty::Easy => "# Easy Level",
                Difficulty::Medium => "# Medium Level",
                Difficulty::Hard => "# Hard Level",
            };
            rows.push((label.into(), self.difficulty.get(&d).copied().unwrap_or(0).to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>8}\n")).collect()
    }
}
