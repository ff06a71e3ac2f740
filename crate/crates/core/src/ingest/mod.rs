//! Raw table ingestion: SAS transport (XPORT v5) and RFC-4180 CSV readers,
//! the NHANES variable schema, cohort construction and county-to-state
//! aggregation of macro indicators.

mod cohort;
mod delimited;
mod schema;
mod state;
pub mod xpt;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cohort::{
    build_cohort, ChildRecord, Cohort, CohortBuild, CohortError, DropReason, IngestReport, MAX_AGE_YEARS,
    MIN_AGE_YEARS,
};
pub use delimited::{parse_csv, CsvError, CsvOptions};
pub use schema::{
    CategoryLevel, Direction, IndicatorSpec, LabelMode, MissingPolicy, Recode, Recoded, SchemaError,
    SchemaFile, VariableEntry, VariableRole, VariableSchema, AGE_VARIABLE, NHANES_PREDICTORS,
    SEX_VARIABLE,
};
pub use state::{
    aggregate_to_state, state_key, AggregationError, AggregationMethod, StateIndicator,
    StateIndicatorTable,
};
pub use xpt::{parse_xpt, XptError};

/// Missing-value code carried by a cell: `.`, `A`..`Z` or `_`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissingCode(char);

impl MissingCode {
    pub const DOT: MissingCode = MissingCode('.');

    pub fn new(code: char) -> Option<Self> {
        matches!(code, '.' | 'A'..='Z' | '_').then_some(MissingCode(code))
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for MissingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Numeric(f64),
    Missing(MissingCode),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Numeric(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing(_))
    }

    /// Key rendering used for ids and join columns. Integral numbers print
    /// without a fractional part.
    pub fn key_string(&self) -> Option<String> {
        match self {
            Cell::Numeric(v) if v.fract() == 0.0 && v.abs() < 1e15 => Some(format!("{}", *v as i64)),
            Cell::Numeric(v) => Some(format!("{v}")),
            Cell::Text(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("row {row} has {found} cells, expected {expected}")]
    RowWidth { row: usize, found: usize, expected: usize },
    #[error("duplicate column name {0:?} (names are compared uppercased)")]
    DuplicateColumn(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("join key column {column:?} has duplicate value {key:?}")]
    DuplicateKey { column: String, key: String },
}

/// Rectangular table of cells as read from a source file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    column_names: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn new(column_names: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.to_uppercase()) {
                return Err(TableError::DuplicateColumn(name.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != column_names.len() {
                return Err(TableError::RowWidth {
                    row: i,
                    found: row.len(),
                    expected: column_names.len(),
                });
            }
        }
        Ok(RawTable { column_names, rows })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Case-insensitive column lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn require_column(&self, name: &str) -> Result<usize, TableError> {
        self.column_index(name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.rows[row][col]
    }

    /// Left join on a key column: every row of `self` is kept, matching
    /// columns of `other` are appended (key column not repeated). Rows of
    /// `self` without a partner receive `Missing(".")` cells.
    pub fn left_join(&self, other: &RawTable, key: &str) -> Result<RawTable, TableError> {
        let lk = self.require_column(key)?;
        let rk = other.require_column(key)?;
        let mut index = std::collections::HashMap::new();
        for (i, row) in other.rows.iter().enumerate() {
            if let Some(k) = row[rk].key_string() {
                if index.insert(k.clone(), i).is_some() {
                    return Err(TableError::DuplicateKey {
                        column: key.to_string(),
                        key: k,
                    });
                }
            }
        }
        let extra: Vec<usize> = (0..other.column_names.len()).filter(|&c| c != rk).collect();
        let mut names = self.column_names.clone();
        names.extend(extra.iter().map(|&c| other.column_names[c].clone()));
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let partner = row[lk].key_string().and_then(|k| index.get(&k).copied());
                let mut out = row.clone();
                match partner {
                    Some(j) => out.extend(extra.iter().map(|&c| other.rows[j][c].clone())),
                    None => out.extend(extra.iter().map(|_| Cell::Missing(MissingCode::DOT))),
                }
                out
            })
            .collect();
        RawTable::new(names, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names_case_insensitively() {
        let err = RawTable::new(vec!["seqn".into(), "SEQN".into()], vec![]).unwrap_err();
        assert_eq!(err, TableError::DuplicateColumn("SEQN".into()));
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = RawTable::new(vec!["A".into()], vec![vec![]]).unwrap_err();
        assert!(matches!(err, TableError::RowWidth { row: 0, .. }));
    }

    #[test]
    fn left_join_fills_missing_partners() {
        let a = RawTable::new(
            vec!["SEQN".into(), "X".into()],
            vec![
                vec![Cell::Numeric(1.0), Cell::Numeric(10.0)],
                vec![Cell::Numeric(2.0), Cell::Numeric(20.0)],
            ],
        )
        .unwrap();
        let b = RawTable::new(
            vec!["seqn".into(), "Y".into()],
            vec![vec![Cell::Numeric(2.0), Cell::Text("b".into())]],
        )
        .unwrap();
        let j = a.left_join(&b, "SEQN").unwrap();
        assert_eq!(j.column_names(), &["SEQN", "X", "Y"]);
        assert_eq!(j.cell(0, 2), &Cell::Missing(MissingCode::DOT));
        assert_eq!(j.cell(1, 2), &Cell::Text("b".into()));
    }

    #[test]
    fn missing_code_domain() {
        assert!(MissingCode::new('.').is_some());
        assert!(MissingCode::new('Q').is_some());
        assert!(MissingCode::new('_').is_some());
        assert!(MissingCode::new('a').is_none());
        assert!(MissingCode::new('0').is_none());
    }
}
