//! Chat-style training sequences with a character offset marking where the
//! supervised loss starts.
//!
//! Layout, one newline after each marker:
//!
//! ```text
//! <|system|>
//! {system prompt}
//! <|user|>
//! {instruction}
//! {text}
//! <|assistant|>
//! {explanation}        (chain-of-thought only)
//! {table}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Instance, Variant};
use crate::table::serialize_table;

pub const SYSTEM_MARKER: &str = "<|system|>";
pub const USER_MARKER: &str = "<|user|>";
pub const ASSISTANT_MARKER: &str = "<|assistant|>";

pub const COT_SYSTEM_PROMPT: &str = "You are a helpful assistant. Follow the user instruction to output a paragraph as the explanation and extract information from the given text into a concise markdown table.";
pub const DIRECT_SYSTEM_PROMPT: &str = "You are a helpful assistant. Follow the user instruction to extract information from the given text into a concise markdown table.";
/// Clause present only in the chain-of-thought system prompt.
pub const EXPLANATION_CLAUSE: &str = "output a paragraph as the explanation";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("instance {0} has no table")]
    MissingTable(String),
    #[error("chain-of-thought instance {0} has no explanation")]
    MissingExplanation(String),
    #[error("instance {id}: {field} contains the reserved marker {marker}")]
    ReservedMarker { id: String, field: &'static str, marker: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedExample {
    pub id: String,
    pub sequence: String,
    /// Offset in characters (not bytes) of the first response character.
    pub loss_start: usize,
    pub variant: Variant,
}

impl FormattedExample {
    /// The part of the sequence the loss is computed on.
    pub fn response(&self) -> &str {
        let byte = self.sequence.char_indices().nth(self.loss_start).map_or(self.sequence.len(), |(b, _)| b);
        &self.sequence[byte..]
    }
}

pub fn system_prompt(variant: Variant) -> &'static str {
    match variant {
        Variant::Direct => DIRECT_SYSTEM_PROMPT,
        Variant::Cot => COT_SYSTEM_PROMPT,
    }
}

pub fn format_example(inst: &Instance) -> Result<FormattedExample, FormatError> {
    let table = inst.table.as_ref().ok_or_else(|| FormatError::MissingTable(inst.id.clone()))?;
    let response = match inst.variant {
        Variant::Direct => serialize_table(table),
        Variant::Cot => {
            let explanation = inst
                .explanation
                .as_deref()
                .filter(|e| !e.trim().is_empty())
                .ok_or_else(|| FormatError::MissingExplanation(inst.id.clone()))?;
            format!("{}\n{}", explanation.trim(), serialize_table(table))
        }
    };
    for (field, value) in
        [("instruction", inst.instruction.as_str()), ("text", inst.text.as_str()), ("response", response.as_str())]
    {
        for marker in [SYSTEM_MARKER, USER_MARKER, ASSISTANT_MARKER] {
            if value.contains(marker) {
                return Err(FormatError::ReservedMarker { id: inst.id.clone(), field, marker });
            }
        }
    }
    let prefix = format!(
        "{SYSTEM_MARKER}\n{}\n{USER_MARKER}\n{}\n{}\n{ASSISTANT_MARKER}\n",
        system_prompt(inst.variant),
        inst.instruction,
        inst.text
    );
    Ok(FormattedExample {
        id: inst.id.clone(),
        loss_start: prefix.chars().count(),
        sequence: prefix + &response,
        variant: inst.variant,
    })
}
