//! Prompt templates for the data-generation steps.
//!
//! Each step has one template file (TOML) holding the prompt body and its
//! demonstration examples. The body uses `{slot}` placeholders; the special
//! `{demonstrations}` slot is filled from the file's `[[examples]]` tables,
//! and `{sentences}` from the paraphrase batch. Default templates are
//! compiled in and can be overridden from a directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Instructions per paraphrase request.
pub const PARAPHRASE_BATCH_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("missing slot `{0}`")]
    MissingSlot(String),
    #[error("paraphrase batch must hold exactly {expected} sentences, got {got}")]
    WrongBatchSize { expected: usize, got: usize },
    #[error("no template for step {0}")]
    UnknownStep(String),
    #[error("template {step}: {message}")]
    BadTemplate { step: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStep {
    FixedInstructionGen,
    BackgroundTextGen,
    OpenInstructionGen,
    Paraphrase,
    TableGenDirect,
    TableGenCot,
}

impl PromptStep {
    pub const ALL: [PromptStep; 6] = [
        PromptStep::FixedInstructionGen,
        PromptStep::BackgroundTextGen,
        PromptStep::OpenInstructionGen,
        PromptStep::Paraphrase,
        PromptStep::TableGenDirect,
        PromptStep::TableGenCot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStep::FixedInstructionGen => "fixed_instruction_gen",
            PromptStep::BackgroundTextGen => "background_text_gen",
            PromptStep::OpenInstructionGen => "open_instruction_gen",
            PromptStep::Paraphrase => "paraphrase",
            PromptStep::TableGenDirect => "table_gen_direct",
            PromptStep::TableGenCot => "table_gen_cot",
        }
    }

    /// Field labels of one demonstration, in the order they are printed.
    pub fn example_fields(self) -> &'static [(&'static str, &'static str)] {
        match self {
            PromptStep::FixedInstructionGen => &[("Instruction", "instruction"), ("Domain", "domain")],
            PromptStep::BackgroundTextGen => &[("Instruction", "instruction"), ("Text", "text")],
            PromptStep::OpenInstructionGen => &[("Text", "text"), ("Instruction", "instruction")],
            PromptStep::Paraphrase => &[],
            PromptStep::TableGenDirect => &[("Instruction", "instruction"), ("Text", "text"), ("Table", "table")],
            PromptStep::TableGenCot => {
                &[("Instruction", "instruction"), ("Text", "text"), ("Explanation", "explanation"), ("Table", "table")]
            }
        }
    }

    fn default_source(self) -> &'static str {
        match self {
            PromptStep::FixedInstructionGen => include_str!("../../prompts/fixed_instruction_gen.toml"),
            PromptStep::BackgroundTextGen => include_str!("../../prompts/background_text_gen.toml"),
            PromptStep::OpenInstructionGen => include_str!("../../prompts/open_instruction_gen.toml"),
            PromptStep::Paraphrase => include_str!("../../prompts/paraphrase.toml"),
            PromptStep::TableGenDirect => include_str!("../../prompts/table_gen_direct.toml"),
            PromptStep::TableGenCot => include_str!("../../prompts/table_gen_cot.toml"),
        }
    }
}

impl fmt::Display for PromptStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStep {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStep::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| PromptError::UnknownStep(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PromptTemplate {
    pub step: PromptStep,
    pub body: String,
    #[serde(default)]
    pub examples: Vec<BTreeMap<String, String>>,
}

impl PromptTemplate {
    pub fn from_toml(source: &str) -> Result<Self, PromptError> {
        let t: PromptTemplate = toml::from_str(source)
            .map_err(|e| PromptError::BadTemplate { step: "?".into(), message: e.to_string() })?;
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), PromptError> {
        for (i, ex) in self.examples.iter().enumerate() {
            for (_, key) in self.step.example_fields() {
                if !ex.contains_key(*key) {
                    return Err(PromptError::BadTemplate {
                        step: self.step.to_string(),
                        message: format!("example {} lacks field `{key}`", i + 1),
                    });
                }
            }
        }
        Ok(())
    }

    /// Slot names referenced by the body, in order of first appearance.
    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for piece in scan(&self.body) {
            if let Piece::Slot(name) = piece {
                if !out.iter().any(|s| s == name) {
                    out.push(name.to_string());
                }
            }
        }
        out
    }

    fn render_demonstrations(&self) -> String {
        let mut out = String::new();
        for (i, ex) in self.examples.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("Example {}:", i + 1));
            for (label, key) in self.step.example_fields() {
                let value = ex[*key].trim();
                if value.contains('\n') {
                    out.push_str(&format!("\n - {label}:\n{value}"));
                } else {
                    out.push_str(&format!("\n - {label}: {value}"));
                }
            }
        }
        out
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

/// Splits a body into literals and `{name}` slots, where a name is a
/// non-empty run of lowercase ASCII letters and underscores. Any other brace
/// is literal text.
fn scan(body: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after.bytes().take_while(|b| b.is_ascii_lowercase() || *b == b'_').count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            pieces.push(Piece::Literal(&rest[..open]));
            pieces.push(Piece::Slot(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            pieces.push(Piece::Literal(&rest[..=open]));
            rest = after;
        }
    }
    pieces.push(Piece::Literal(rest));
    pieces
}

/// Slot values for one rendering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptContext {
    slots: BTreeMap<String, String>,
    sentences: Option<Vec<String>>,
    sentence_styles: Option<Vec<String>>,
}

impl PromptContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slot(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.slots.insert(name.into(), value.into());
        self
    }

    /// Sentences for the paraphrase step, rendered as `Sentence k: ...`.
    pub fn sentences<I, S>(mut self, items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.sentences = Some(items.into_iter().map(Into::into).collect());
        self
    }

    /// Per-sentence style names, rendered as `Sentence k [style]: ...`.
    pub fn sentence_styles<I, S>(mut self, styles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.sentence_styles = Some(styles.into_iter().map(Into::into).collect());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.slots.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<PromptStep, PromptTemplate>,
    paraphrase_batch: usize,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let templates = PromptStep::ALL
            .into_iter()
            .map(|step| {
                let t = PromptTemplate::from_toml(step.default_source())
                    .unwrap_or_else(|e| panic!("built-in template {step} is invalid: {e}"));
                assert_eq!(t.step, step, "built-in template declares the wrong step");
                (step, t)
            })
            .collect();
        Self { templates, paraphrase_batch: PARAPHRASE_BATCH_SIZE }
    }

    /// Loads `<step>.toml` files from `dir`; steps without a file keep the
    /// built-in template.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut lib = Self::builtin();
        for step in PromptStep::ALL {
            let path = dir.as_ref().join(format!("{step}.toml"));
            if !path.exists() {
                continue;
            }
            let source = std::fs::read_to_string(&path).map_err(|e| PromptError::BadTemplate {
                step: step.to_string(),
                message: format!("{}: {e}", path.display()),
            })?;
            let t = PromptTemplate::from_toml(&source)?;
            if t.step != step {
                return Err(PromptError::BadTemplate {
                    step: step.to_string(),
                    message: format!("{} declares step {}", path.display(), t.step),
                });
            }
            lib.templates.insert(step, t);
        }
        Ok(lib)
    }

    pub fn with_paraphrase_batch(mut self, n: usize) -> Self {
        self.paraphrase_batch = n;
        self
    }

    pub fn paraphrase_batch(&self) -> usize {
        self.paraphrase_batch
    }

    pub fn template(&self, step: PromptStep) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(&step).ok_or_else(|| PromptError::UnknownStep(step.to_string()))
    }

    pub fn insert(&mut self, template: PromptTemplate) -> Result<(), PromptError> {
        template.check()?;
        self.templates.insert(template.step, template);
        Ok(())
    }

    /// Substitutes every slot of the step's template. Fails on the first
    /// slot the context does not provide.
    pub fn render(&self, step: PromptStep, ctx: &PromptContext) -> Result<String, PromptError> {
        let template = self.template(step)?;
        if step == PromptStep::Paraphrase {
            let got = ctx.sentences.as_ref().map_or(0, Vec::len);
            if got != self.paraphrase_batch {
                return Err(PromptError::WrongBatchSize { expected: self.paraphrase_batch, got });
            }
        }
        let mut out = String::with_capacity(template.body.len() * 2);
        for piece in scan(&template.body) {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot("demonstrations") => {
                    if template.examples.is_empty() {
                        return Err(PromptError::MissingSlot("demonstrations".into()));
                    }
                    out.push_str(&template.render_demonstrations());
                }
                Piece::Slot("sentences") => {
                    let items = ctx.sentences.as_ref().ok_or_else(|| PromptError::MissingSlot("sentences".into()))?;
                    let styles = ctx.sentence_styles.as_deref().unwrap_or_default();
                    let lines: Vec<String> = items
                        .iter()
                        .enumerate()
                        .map(|(i, s)| match styles.get(i) {
                            Some(style) => format!("Sentence {} [{style}]: {}", i + 1, s.trim()),
                            None => format!("Sentence {}: {}", i + 1, s.trim()),
                        })
                        .collect();
                    out.push_str(&lines.join("\n"));
                }
                Piece::Slot(name) => {
                    let value = ctx.get(name).ok_or_else(|| PromptError::MissingSlot(name.into()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}
