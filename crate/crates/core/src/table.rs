//! Pipe-delimited markdown tables.
//!
//! Parsing is lenient: the table may sit inside surrounding prose, the
//! delimiter row may be missing, and ragged rows are padded or truncated to
//! the header width. Serialization always emits the canonical form, so
//! `parse_table(&t.to_markdown())` reproduces `t`.

use std::fmt;

use thiserror::Error;

/// Placeholder used for information that is absent from the source text.
pub const NOT_AVAILABLE: &str = "N/A";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("no pipe table found in text")]
    NoTableFound,
    #[error("table header has no non-empty cells")]
    EmptyHeader,
    #[error("table header cell {column} is empty")]
    EmptyHeaderCell { column: usize },
}

/// A header row plus content rows, every row exactly as wide as the header.
///
/// Equality ignores `source_text`: two tables are equal when their header and
/// content cells are equal.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    source_text: Option<String>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.rows == other.rows
    }
}

impl Eq for Table {}

/// Row/column counts and the number of `N/A` content cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableShape {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_na: usize,
}

impl TableShape {
    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }
}

impl Table {
    /// Builds a table, normalizing every cell and fitting rows to the header
    /// width (short rows padded with empty cells, long rows truncated).
    pub fn new<H, R>(header: H, rows: R) -> Result<Self, TableError>
    where
        H: IntoIterator,
        H::Item: AsRef<str>,
        R: IntoIterator,
        R::Item: IntoIterator,
        <R::Item as IntoIterator>::Item: AsRef<str>,
    {
        let header: Vec<String> = header.into_iter().map(|h| normalize_cell(h.as_ref())).collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(TableError::EmptyHeader);
        }
        if let Some(column) = header.iter().position(|h| h.is_empty()) {
            return Err(TableError::EmptyHeaderCell { column });
        }
        let width = header.len();
        let rows = rows
            .into_iter()
            .map(|row| {
                let mut cells: Vec<String> = row.into_iter().take(width).map(|c| normalize_cell(c.as_ref())).collect();
                cells.resize(width, String::new());
                cells
            })
            .collect();
        Ok(Self { header, rows, source_text: None })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// The raw markdown this table was parsed from, if it came from text.
    pub fn source_text(&self) -> Option<&str> {
        self.source_text.as_deref()
    }

    /// Content cells in row-major order, paired with their column header.
    pub fn cells(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.rows.iter().flat_map(move |row| self.header.iter().zip(row.iter()).map(|(h, c)| (h.as_str(), c.as_str())))
    }

    pub fn shape(&self) -> TableShape {
        table_shape(self)
    }

    pub fn to_markdown(&self) -> String {
        serialize_table(self)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_table(self))
    }
}

/// Trims surrounding whitespace and flattens line breaks, which cannot be
/// represented inside a pipe-table row.
pub fn normalize_cell(cell: &str) -> String {
    let cell = cell.trim();
    if cell.contains(['\n', '\r']) {
        cell.split(['\n', '\r']).map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
    } else {
        cell.to_string()
    }
}

/// True for cells that spell the `N/A` placeholder, ignoring case and
/// surrounding whitespace.
pub fn is_not_available(cell: &str) -> bool {
    cell.trim().eq_ignore_ascii_case(NOT_AVAILABLE)
}

/// A pipe counts as a delimiter unless a backslash immediately precedes it.
fn has_unescaped_pipe(line: &str) -> bool {
    let mut prev = None;
    for ch in line.chars() {
        if ch == '|' && prev != Some('\\') {
            return true;
        }
        prev = Some(ch);
    }
    false
}

/// Splits one table line into raw cells. `\|` becomes a literal pipe; any
/// other backslash is kept as-is.
fn split_row(line: &str) -> Vec<String> {
    let line = line.trim();
    let mut cells = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars().peekable();
    let mut leading = true;
    let mut ended_on_pipe = false;
    while let Some(ch) = chars.next() {
        match ch {
            '\\' if chars.peek() == Some(&'|') => {
                chars.next();
                current.push('|');
                ended_on_pipe = false;
            }
            '|' => {
                if !(leading && current.trim().is_empty()) {
                    cells.push(std::mem::take(&mut current));
                }
                current.clear();
                ended_on_pipe = true;
            }
            _ => {
                current.push(ch);
                if !ch.is_whitespace() {
                    ended_on_pipe = false;
                }
            }
        }
        leading = false;
    }
    if !ended_on_pipe || !current.trim().is_empty() {
        cells.push(current);
    }
    cells.iter().map(|c| normalize_cell(c)).collect()
}

fn is_delimiter_row(line: &str) -> bool {
    let cells = split_row(line);
    !cells.is_empty()
        && cells.iter().all(|c| {
            let inner = c.strip_prefix(':').unwrap_or(c);
            let inner = inner.strip_suffix(':').unwrap_or(inner);
            !inner.is_empty() && inner.chars().all(|ch| ch == '-')
        })
}

/// Byte range and lines of the first pipe-table block in a text.
struct Block<'a> {
    start: usize,
    end: usize,
    lines: Vec<&'a str>,
}

fn find_block(text: &str) -> Option<Block<'_>> {
    let mut lines = Vec::new();
    let mut pos = 0;
    for raw in text.split_inclusive('\n') {
        lines.push((pos, raw.trim_end_matches(['\n', '\r'])));
        pos += raw.len();
    }
    for (i, &(offset, raw)) in lines.iter().enumerate() {
        let line = raw.trim();
        let starts_block = line.starts_with('|')
            || (has_unescaped_pipe(line) && lines.get(i + 1).is_some_and(|&(_, next)| is_delimiter_row(next)));
        if !starts_block {
            continue;
        }
        let start = offset + (raw.len() - raw.trim_start().len());
        let mut block = Block { start, end: start, lines: Vec::new() };
        for &(offset, raw) in &lines[i..] {
            let candidate = raw.trim();
            if candidate.is_empty() || !has_unescaped_pipe(candidate) {
                break;
            }
            block.lines.push(candidate);
            block.end = offset + raw.trim_end().len();
        }
        return Some(block);
    }
    None
}

/// Byte offset at which the first table block of `text` begins.
pub fn find_table_start(text: &str) -> Option<usize> {
    find_block(text).map(|b| b.start)
}

/// Extracts the first pipe table from arbitrary text.
pub fn parse_table(text: &str) -> Result<Table, TableError> {
    let block = find_block(text).ok_or(TableError::NoTableFound)?;
    let (header_line, mut body) = block.lines.split_first().ok_or(TableError::NoTableFound)?;
    if body.first().is_some_and(|l| is_delimiter_row(l)) {
        body = &body[1..];
    }
    let rows: Vec<Vec<String>> = body.iter().map(|l| split_row(l)).collect();
    let mut table = Table::new(split_row(header_line), rows)?;
    table.source_text = Some(text[block.start..block.end].to_string());
    Ok(table)
}

fn escape_cell(cell: &str) -> String {
    cell.replace('|', "\\|")
}

/// Canonical markdown form: header, `---` delimiter row, content rows, each
/// cell padded with one space and literal pipes escaped. No trailing newline.
pub fn serialize_table(t: &Table) -> String {
    fn line<'a>(cells: impl Iterator<Item = &'a str>) -> String {
        let mut out = String::from("|");
        for cell in cells {
            out.push(' ');
            out.push_str(&escape_cell(cell));
            out.push_str(" |");
        }
        out
    }
    let mut lines = Vec::with_capacity(t.rows.len() + 2);
    lines.push(line(t.header.iter().map(String::as_str)));
    lines.push(line(t.header.iter().map(|_| "---")));
    for row in &t.rows {
        lines.push(line(row.iter().map(String::as_str)));
    }
    lines.join("\n")
}

pub fn table_shape(t: &Table) -> TableShape {
    TableShape {
        n_rows: t.rows.len(),
        n_cols: t.header.len(),
        n_na: t.rows.iter().flatten().filter(|c| is_not_available(c)).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_table() {
        let t = parse_table("| a | b |\n|---|---|\n| 1 | 2 |").unwrap();
        assert_eq!(t.header(), ["a", "b"]);
        assert_eq!(t.rows(), [vec!["1".to_string(), "2".to_string()]]);
    }

    #[test]
    fn parses_table_after_prose() {
        let t = parse_table("Explanation text.\n| x |\n|---|\n| N/A |").unwrap();
        assert_eq!(t.header(), ["x"]);
        assert_eq!(t.rows(), [vec!["N/A".to_string()]]);
        assert_eq!(t.source_text(), Some("| x |\n|---|\n| N/A |"));
    }

    #[test]
    fn rejects_text_without_pipes() {
        assert_eq!(parse_table("no pipes here at all"), Err(TableError::NoTableFound));
        assert_eq!(parse_table(""), Err(TableError::NoTableFound));
    }

    #[test]
    fn empty_header_is_an_error() {
        assert_eq!(parse_table("|  |  |\n|---|---|\n| 1 | 2 |"), Err(TableError::EmptyHeader));
        assert_eq!(parse_table("| a |  |\n|---|---|\n| 1 | 2 |"), Err(TableError::EmptyHeaderCell { column: 1 }));
    }

    #[test]
    fn separator_is_optional() {
        let t = parse_table("| a | b |\n| 1 | 2 |\n| 3 | 4 |").unwrap();
        assert_eq!(t.n_rows(), 2);
        let t = parse_table("| a | b |\n|:--|--:|\n| 1 | 2 |").unwrap();
        assert_eq!(t.n_rows(), 1);
    }

    #[test]
    fn rows_without_outer_pipes() {
        let t = parse_table("intro\na | b\n--- | ---\n1 | 2\n\nafter").unwrap();
        assert_eq!(t.header(), ["a", "b"]);
        assert_eq!(t.rows(), [vec!["1".to_string(), "2".to_string()]]);
    }

    #[test]
    fn ragged_rows_are_padded_or_truncated() {
        let t = parse_table("| a | b | c |\n|---|---|---|\n| 1 |\n| 1 | 2 | 3 | 4 |").unwrap();
        assert_eq!(t.rows()[0], ["1", "", ""]);
        assert_eq!(t.rows()[1], ["1", "2", "3"]);
    }

    #[test]
    fn only_first_table_is_extracted() {
        let t = parse_table("| a |\n|---|\n| 1 |\n\ntext\n\n| b |\n|---|\n| 2 |").unwrap();
        assert_eq!(t.header(), ["a"]);
        assert_eq!(t.n_rows(), 1);
    }

    #[test]
    fn escaped_pipes_stay_literal() {
        let t = Table::new(["h"], [["a|b"]]).unwrap();
        let md = serialize_table(&t);
        assert_eq!(md, "| h |\n| --- |\n| a\\|b |");
        assert_eq!(parse_table(&md).unwrap().rows()[0][0], "a|b");
    }

    #[test]
    fn serializes_header_only() {
        let t = Table::new(["a"], Vec::<Vec<String>>::new()).unwrap();
        assert_eq!(serialize_table(&t), "| a |\n| --- |");
        assert_eq!(parse_table("| a |\n| --- |").unwrap(), t);
    }

    #[test]
    fn shape_counts() {
        let t = Table::new(["a", "b", "c"], [["1", "N/A", "3"], ["4", "5", "6"]]).unwrap();
        assert_eq!(table_shape(&t), TableShape { n_rows: 2, n_cols: 3, n_na: 1 });

        let t = Table::new(["a", "b", "c"], Vec::<Vec<&str>>::new()).unwrap();
        assert_eq!(table_shape(&t), TableShape { n_rows: 0, n_cols: 3, n_na: 0 });

        let t = Table::new(["a", "b"], [["n/a", "N/a"], [" n/A ", "N/A"]]).unwrap();
        assert_eq!(table_shape(&t).n_na, 4);
    }

    #[test]
    fn header_cells_are_not_counted_as_na() {
        let t = Table::new(["N/A", "b"], [["x", "y"]]).unwrap();
        assert_eq!(table_shape(&t).n_na, 0);
    }

    #[test]
    fn unicode_whitespace_is_trimmed() {
        let t = parse_table("|\u{00a0}a\u{2003}| b |\n|---|---|\n| 1 | 2 |").unwrap();
        assert_eq!(t.header(), ["a", "b"]);
    }

    #[test]
    fn find_table_start_points_at_first_table_line() {
        let text = "Because reasons.\n\n| a | b |\n|---|---|\n| 1 | 2 |";
        let start = find_table_start(text).unwrap();
        assert!(text[start..].starts_with("| a | b |"));
    }
}
