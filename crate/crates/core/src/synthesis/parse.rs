//! Parsers for model completions in the synthesis steps.

use crate::table::find_table_start;

/// Result of parsing one instruction-generation completion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedInstructions {
    pub items: Vec<(String, String)>,
    /// Numbered items that lacked an instruction or a domain.
    pub malformed: usize,
}

/// Splits a completion into numbered items. An item starts at a line like
/// `Example 3:`, `3.`, `3)` or `3:`.
fn numbered_items(completion: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in completion.lines() {
        let trimmed = line.trim();
        if let Some(rest) = strip_item_number(trimmed) {
            if let Some(done) = current.take() {
                items.push(done);
            }
            current = Some(rest.to_string());
        } else if let Some(cur) = current.as_mut() {
            cur.push('\n');
            cur.push_str(trimmed);
        }
    }
    items.extend(current);
    items
}

fn strip_item_number(line: &str) -> Option<&str> {
    let body = line.strip_prefix("Example").map(str::trim_start).unwrap_or(line);
    let digits = body.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &body[digits..];
    let rest = rest.strip_prefix(':').or_else(|| rest.strip_prefix('.')).or_else(|| rest.strip_prefix(')'))?;
    if !(rest.is_empty() || rest.starts_with(char::is_whitespace)) {
        return None;
    }
    Some(rest.trim())
}

/// Value after `label:` in an item, up to the end of its line.
fn labelled<'a>(item: &'a str, label: &str) -> Option<&'a str> {
    for line in item.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim_start();
        let Some(rest) = line.get(..label.len()) else {
            continue;
        };
        if rest.eq_ignore_ascii_case(label) {
            if let Some(value) = line[label.len()..].trim_start().strip_prefix(':') {
                let value = value.trim();
                if !value.is_empty() {
                    return Some(value);
                }
            }
        }
    }
    None
}

/// Reads `(instruction, domain)` pairs from a numbered list completion.
pub fn parse_instruction_list(completion: &str) -> ParsedInstructions {
    let mut out = ParsedInstructions::default();
    for item in numbered_items(completion) {
        match (labelled(&item, "Instruction"), labelled(&item, "Domain")) {
            (Some(i), Some(d)) => out.items.push((i.to_string(), d.to_string())),
            _ => out.malformed += 1,
        }
    }
    out
}

/// Splits a paraphrase completion into non-empty lines, removing any
/// `Sentence k:` or `k.` prefix the model may have echoed.
pub fn parse_paraphrases(completion: &str) -> Vec<String> {
    completion
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let unprefixed = l.strip_prefix("Sentence ").and_then(|rest| {
                let (tag, body) = rest.split_once(':')?;
                tag.split_whitespace().next().filter(|n| n.bytes().all(|b| b.is_ascii_digit())).map(|_| body.trim())
            });
            unprefixed
                .or_else(|| strip_item_number(l).filter(|_| l.as_bytes()[0].is_ascii_digit()))
                .unwrap_or(l)
                .to_string()
        })
        .collect()
}

/// Splits a chain-of-thought completion into the explanation before the
/// first table line and the rest. Without a table the whole output is kept
/// as the raw table output so the validity check rejects it.
pub fn split_cot(completion: &str) -> (Option<String>, String) {
    let Some(start) = find_table_start(completion) else {
        return (None, completion.to_string());
    };
    let mut explanation = completion[..start].trim();
    for label in ["Explanation:", "- Explanation:"] {
        if let Some(rest) = explanation.strip_prefix(label) {
            explanation = rest.trim();
        }
    }
    for label in ["- Table:", "Table:"] {
        if let Some(rest) = explanation.strip_suffix(label) {
            explanation = rest.trim();
        }
    }
    let explanation = (!explanation.is_empty()).then(|| explanation.to_string());
    (explanation, completion[start..].to_string())
}

const EXTRACTION_VERBS: &[&str] =
    &["extract", "list", "identify", "get", "pull out", "need", "find", "collect", "gather", "retrieve"];
const SPAN_ENDS: &[&str] =
    &[" from ", " in ", " mentioned", " listed", " of the ", " of these ", " for each ", "?", "."];
const LEADING_WORDS: &[&str] = &["the ", "all ", "every ", "each ", "any "];

/// Header names an instruction asks for, read from the phrase after its
/// first extraction verb, e.g. `["position", "salary"]` for "Extract
/// position and salary from job postings."
pub fn instruction_headers(instruction: &str) -> Vec<String> {
    let lower = instruction.to_lowercase();
    let start = EXTRACTION_VERBS.iter().filter_map(|v| find_word(&lower, v).map(|p| p + v.len())).min();
    let Some(start) = start else {
        return Vec::new();
    };
    let mut span = &lower[start..];
    let end = SPAN_ENDS.iter().filter_map(|e| span.find(e)).min().unwrap_or(span.len());
    span = span[..end].trim();
    span.split(", ")
        .flat_map(|part| part.split(" and "))
        .map(|h| {
            let mut h = h.trim().trim_start_matches("and ").trim();
            for w in LEADING_WORDS {
                h = h.strip_prefix(w).unwrap_or(h);
            }
            h.trim().to_string()
        })
        .filter(|h| !h.is_empty())
        .collect()
}

/// Byte offset of `needle` in `haystack` at word boundaries.
pub fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
        if boundary(haystack[..start].chars().next_back()) && boundary(haystack[end..].chars().next()) {
            return Some(start);
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Headers of `fixed_instruction` that appear in `open_instruction`,
/// compared case-insensitively at word boundaries.
pub fn leaked_headers(open_instruction: &str, fixed_instruction: &str) -> Vec<String> {
    let lower = open_instruction.to_lowercase();
    instruction_headers(fixed_instruction).into_iter().filter(|h| find_word(&lower, h).is_some()).collect()
}
