//! County-to-state aggregation of macro indicators.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Cell, Direction, IndicatorSpec, RawTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    Mean,
    /// Weight-normalised mean using the named column (e.g. county population).
    WeightedMean(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("total weight is zero for state {state:?}, indicator {indicator:?}")]
    ZeroTotalWeight { state: String, indicator: String },
    #[error("negative weight {weight} in row {row}")]
    NegativeWeight { row: usize, weight: f64 },
    #[error("indicator {0:?} appears in both tables")]
    DuplicateIndicator(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateIndicator {
    pub name: String,
    pub unit: String,
    pub direction: Direction,
    /// One entry per state, `None` when the state has no observed value.
    pub values: Vec<Option<f64>>,
    /// Fraction of contributing source rows with an observed value.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateIndicatorTable {
    /// Sorted state keys.
    pub states: Vec<String>,
    pub indicators: Vec<StateIndicator>,
}

/// State key of a cell. Integral codes are zero-padded to two digits so
/// numeric FIPS codes match their text form.
pub fn state_key(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Numeric(v) if v.fract() == 0.0 && *v >= 0.0 && *v < 1e9 => Some(format!("{:02}", *v as u64)),
        other => other.key_string(),
    }
}

pub fn aggregate_to_state(
    table: &RawTable,
    key: &str,
    method: &AggregationMethod,
    indicators: &[IndicatorSpec],
) -> Result<StateIndicatorTable, AggregationError> {
    let col = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| AggregationError::MissingColumn(name.to_string()))
    };
    let key_col = col(key)?;
    let weight_col = match method {
        AggregationMethod::Mean => None,
        AggregationMethod::WeightedMean(w) => Some(col(w)?),
    };
    let ind_cols = indicators.iter().map(|s| col(&s.column)).collect::<Result<Vec<_>, _>>()?;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        if let Some(k) = state_key(&row[key_col]) {
            groups.entry(k).or_default().push(i);
        }
    }
    let weight_of = |i: usize| -> Result<Option<f64>, AggregationError> {
        match weight_col.map(|c| table.cell(i, c)) {
            None => Ok(Some(1.0)),
            Some(Cell::Numeric(w)) if *w < 0.0 => Err(AggregationError::NegativeWeight { row: i, weight: *w }),
            Some(Cell::Numeric(w)) => Ok(Some(*w)),
            Some(_) => Ok(None),
        }
    };

    let states: Vec<String> = groups.keys().cloned().collect();
    let total_rows: usize = groups.values().map(Vec::len).sum();
    let mut out = Vec::with_capacity(indicators.len());
    for (spec, &c) in indicators.iter().zip(&ind_cols) {
        let mut observed = 0usize;
        let mut values = Vec::with_capacity(states.len());
        for (state, rows) in &groups {
            let (mut num, mut den, mut any) = (0.0, 0.0, false);
            for &i in rows {
                let Some(x) = table.cell(i, c).as_f64().filter(|x| x.is_finite()) else {
                    continue;
                };
                observed += 1;
                let Some(w) = weight_of(i)? else { continue };
                any = true;
                match weight_col {
                    None => num += x,
                    Some(_) => num += w * x,
                }
                den += w;
            }
            values.push(match (any, den) {
                (false, _) => None,
                (true, d) if d == 0.0 => {
                    return Err(AggregationError::ZeroTotalWeight {
                        state: state.clone(),
                        indicator: spec.name.clone(),
                    })
                }
                (true, d) => Some(num / d),
            });
        }
        out.push(StateIndicator {
            name: spec.name.clone(),
            unit: spec.unit.clone(),
            direction: spec.direction,
            values,
            coverage: if total_rows == 0 { 0.0 } else { observed as f64 / total_rows as f64 },
        });
    }
    Ok(StateIndicatorTable { states, indicators: out })
}

impl StateIndicatorTable {
    pub fn indicator(&self, name: &str) -> Option<&StateIndicator> {
        self.indicators.iter().find(|i| i.name == name)
    }

    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.states.binary_search_by(|s| s.as_str().cmp(state)).ok()
    }

    /// Outer join on states; indicator lists are concatenated.
    pub fn merge(&self, other: &StateIndicatorTable) -> Result<StateIndicatorTable, AggregationError> {
        for ind in &other.indicators {
            if self.indicator(&ind.name).is_some() {
                return Err(AggregationError::DuplicateIndicator(ind.name.clone()));
            }
        }
        let mut states: Vec<String> = self.states.iter().chain(&other.states).cloned().collect();
        states.sort();
        states.dedup();
        let remap = |table: &StateIndicatorTable, ind: &StateIndicator| StateIndicator {
            values: states
                .iter()
                .map(|s| table.state_index(s).and_then(|i| ind.values[i]))
                .collect(),
            ..ind.clone()
        };
        let indicators = self
            .indicators
            .iter()
            .map(|i| remap(self, i))
            .chain(other.indicators.iter().map(|i| remap(other, i)))
            .collect();
        Ok(StateIndicatorTable { states, indicators })
    }

    /// Wide CSV: `state` then one column per indicator; missing cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state");
        for ind in &self.indicators {
            out.push(',');
            out.push_str(&quote(&ind.name));
        }
        out.push('\n');
        for (s, state) in self.states.iter().enumerate() {
            out.push_str(&quote(state));
            for ind in &self.indicators {
                out.push(',');
                if let Some(v) = ind.values[s] {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Rebuild from a table written by [`StateIndicatorTable::to_csv`]; units
    /// and directions come from the specs. Coverage is not persisted in the
    /// wide file and reloads as the fraction of states with a value.
    pub fn from_table(table: &RawTable, specs: &[IndicatorSpec]) -> Result<Self, AggregationError> {
        let col = |name: &str| {
            table
                .column_index(name)
                .ok_or_else(|| AggregationError::MissingColumn(name.to_string()))
        };
        let key = col("state")?;
        let mut order: Vec<(String, usize)> = table
            .rows()
            .iter()
            .enumerate()
            .filter_map(|(i, r)| state_key(&r[key]).map(|k| (k, i)))
            .collect();
        order.sort();
        let mut indicators = Vec::with_capacity(specs.len());
        for spec in specs {
            let c = col(&spec.name)?;
            let values: Vec<Option<f64>> = order.iter().map(|(_, i)| table.cell(*i, c).as_f64()).collect();
            let present = values.iter().filter(|v| v.is_some()).count();
            indicators.push(StateIndicator {
                name: spec.name.clone(),
                unit: spec.unit.clone(),
                direction: spec.direction,
                coverage: if values.is_empty() { 0.0 } else { present as f64 / values.len() as f64 },
                values,
            });
        }
        Ok(StateIndicatorTable {
            states: order.into_iter().map(|(k, _)| k).collect(),
            indicators,
        })
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MissingCode;

    fn spec(col: &str) -> IndicatorSpec {
        IndicatorSpec {
            name: col.into(),
            source: "usda".into(),
            column: col.into(),
            unit: "percent".into(),
            direction: Direction::VulnerabilityIncreasing,
        }
    }

    fn counties(rows: Vec<(&str, Cell, f64)>) -> RawTable {
        RawTable::new(
            vec!["State".into(), "X".into(), "Pop".into()],
            rows.into_iter()
                .map(|(s, x, w)| vec![Cell::Text(s.into()), x, Cell::Numeric(w)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unweighted_and_weighted_examples() {
        let t = counties(vec![("A", Cell::Numeric(10.0), 1.0), ("A", Cell::Numeric(20.0), 3.0)]);
        let mean = aggregate_to_state(&t, "State", &AggregationMethod::Mean, &[spec("X")]).unwrap();
        assert_eq!(mean.indicators[0].values, vec![Some(15.0)]);
        let w = aggregate_to_state(&t, "state", &AggregationMethod::WeightedMean("Pop".into()), &[spec("X")]).unwrap();
        assert_eq!(w.indicators[0].values, vec![Some(17.5)]);
    }

    #[test]
    fn missing_cells_are_ignored_and_coverage_reported() {
        let t = counties(vec![
            ("B", Cell::Numeric(4.0), 1.0),
            ("A", Cell::Missing(MissingCode::DOT), 1.0),
            ("B", Cell::Text("n/a".into()), 1.0),
            ("A", Cell::Numeric(2.0), 1.0),
        ]);
        let out = aggregate_to_state(&t, "State", &AggregationMethod::Mean, &[spec("X")]).unwrap();
        assert_eq!(out.states, vec!["A", "B"]);
        assert_eq!(out.indicators[0].values, vec![Some(2.0), Some(4.0)]);
        assert_eq!(out.indicators[0].coverage, 0.5);
    }

    #[test]
    fn state_without_values_gets_explicit_missing() {
        let t = counties(vec![("A", Cell::Missing(MissingCode::DOT), 1.0), ("B", Cell::Numeric(1.0), 1.0)]);
        let out = aggregate_to_state(&t, "State", &AggregationMethod::Mean, &[spec("X")]).unwrap();
        assert_eq!(out.indicators[0].values, vec![None, Some(1.0)]);
    }

    #[test]
    fn zero_total_weight() {
        let t = counties(vec![("A", Cell::Numeric(1.0), 0.0)]);
        let err = aggregate_to_state(&t, "State", &AggregationMethod::WeightedMean("Pop".into()), &[spec("X")])
            .unwrap_err();
        assert!(matches!(err, AggregationError::ZeroTotalWeight { .. }));
    }

    #[test]
    fn numeric_state_codes_are_zero_padded() {
        assert_eq!(state_key(&Cell::Numeric(1.0)).as_deref(), Some("01"));
        assert_eq!(state_key(&Cell::Text(" 28 ".into())).as_deref(), Some("28"));
    }

    #[test]
    fn merge_is_an_outer_join() {
        let a = counties(vec![("A", Cell::Numeric(1.0), 1.0)]);
        let b = RawTable::new(
            vec!["State".into(), "Y".into()],
            vec![vec![Cell::Text("B".into()), Cell::Numeric(2.0)]],
        )
        .unwrap();
        let ta = aggregate_to_state(&a, "State", &AggregationMethod::Mean, &[spec("X")]).unwrap();
        let tb = aggregate_to_state(&b, "State", &AggregationMethod::Mean, &[spec("Y")]).unwrap();
        let m = ta.merge(&tb).unwrap();
        assert_eq!(m.states, vec!["A", "B"]);
        assert_eq!(m.indicators[0].values, vec![Some(1.0), None]);
        assert_eq!(m.indicators[1].values, vec![None, Some(2.0)]);
        assert!(ta.merge(&ta).is_err());
    }
}
