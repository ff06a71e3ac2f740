//! Strict RFC-4180 reader. Stray or unterminated quotes are errors rather
//! than being absorbed into the field text.

use thiserror::Error;

use super::{Cell, MissingCode, RawTable, TableError};

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            header: true,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("input is not valid UTF-8 (byte {offset})")]
    Encoding { offset: usize },
    #[error("line {line}: row has {found} fields, expected {expected}")]
    RaggedRow {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("line {line}, column {column}: {reason}")]
    QuoteError {
        line: usize,
        column: usize,
        reason: &'static str,
    },
    #[error("invalid header: {0}")]
    Header(TableError),
}

impl CsvError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CsvError::RaggedRow { line, .. } | CsvError::QuoteError { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Split into records of raw field strings; each record remembers the line
/// it started on.
fn records(text: &str, delimiter: char) -> Result<Vec<(usize, Vec<String>)>, CsvError> {
    let mut out = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut line = 1;
    let mut column = 0;
    let mut record_line = 1;
    let mut chars = text.chars().peekable();
    let mut at_field_start = true;
    let mut in_quotes = false;
    let mut after_quote = false;
    let mut quote_line = 0;
    let mut quote_column = 0;
    let mut record_has_content = false;

    while let Some(c) = chars.next() {
        column += 1;
        if in_quotes {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    column += 1;
                    field.push('"');
                } else {
                    in_quotes = false;
                    after_quote = true;
                }
            } else {
                if c == '\n' {
                    line += 1;
                    column = 0;
                }
                field.push(c);
            }
            continue;
        }
        if c == delimiter {
            fields.push(std::mem::take(&mut field));
            at_field_start = true;
            after_quote = false;
            record_has_content = true;
            continue;
        }
        if c == '\r' && chars.peek() == Some(&'\n') {
            continue;
        }
        if c == '\n' {
            if record_has_content || !field.is_empty() || after_quote {
                fields.push(std::mem::take(&mut field));
                out.push((record_line, std::mem::take(&mut fields)));
            }
            line += 1;
            column = 0;
            record_line = line;
            at_field_start = true;
            after_quote = false;
            record_has_content = false;
            continue;
        }
        if after_quote {
            return Err(CsvError::QuoteError {
                line,
                column,
                reason: "unexpected character after closing quote",
            });
        }
        if c == '"' {
            if !at_field_start {
                return Err(CsvError::QuoteError {
                    line,
                    column,
                    reason: "quote inside an unquoted field",
                });
            }
            in_quotes = true;
            quote_line = line;
            quote_column = column;
            at_field_start = false;
            record_has_content = true;
            continue;
        }
        field.push(c);
        at_field_start = false;
        record_has_content = true;
    }
    if in_quotes {
        return Err(CsvError::QuoteError {
            line: quote_line,
            column: quote_column,
            reason: "unterminated quoted field",
        });
    }
    if record_has_content || !field.is_empty() || after_quote {
        fields.push(field);
        out.push((record_line, fields));
    }
    Ok(out)
}

fn classify(raw: &str) -> Cell {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Cell::Missing(MissingCode::DOT);
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Numeric(v),
        _ => Cell::Text(raw.to_string()),
    }
}

/// Parse delimited text. Numeric-looking cells become `Numeric`, empty cells
/// `Missing(".")`, everything else `Text`. Without a header, columns are
/// named `COL1`, `COL2`, ...
pub fn parse_csv(bytes: &[u8], options: &CsvOptions) -> Result<RawTable, CsvError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CsvError::Encoding {
        offset: e.valid_up_to(),
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut recs = records(text, options.delimiter as char)?.into_iter();

    let (names, first_data) = if options.header {
        match recs.next() {
            Some((_, names)) => (names.into_iter().map(|n| n.trim().to_string()).collect(), None),
            None => (Vec::new(), None),
        }
    } else {
        match recs.next() {
            Some(first) => (
                (1..=first.1.len()).map(|i| format!("COL{i}")).collect::<Vec<_>>(),
                Some(first),
            ),
            None => (Vec::new(), None),
        }
    };

    let width = names.len();
    let mut rows = Vec::new();
    for (line, fields) in first_data.into_iter().chain(recs) {
        if fields.len() != width {
            return Err(CsvError::RaggedRow {
                line,
                found: fields.len(),
                expected: width,
            });
        }
        rows.push(fields.iter().map(|f| classify(f)).collect());
    }
    RawTable::new(names, rows).map_err(CsvError::Header)
}
