//! Child cohort construction: age filter, predictor recoding, missing-data
//! policy, BMI and the obesity label.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::schema::{parse_sex_label, LabelMode, MissingPolicy, Recode, Recoded, VariableEntry};
use super::{Cell, RawTable, VariableRole, VariableSchema, AGE_VARIABLE, SEX_VARIABLE};
use crate::growth::{self, GrowthReference, Sex};

pub const MIN_AGE_YEARS: f64 = 2.0;
pub const MAX_AGE_YEARS: f64 = 19.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    AgeOutOfRange,
    MissingPredictor,
    MissingAnthropometry,
    InvalidAnthropometry,
    LabelUnavailable,
}

impl DropReason {
    pub const ALL: [DropReason; 5] = [
        DropReason::AgeOutOfRange,
        DropReason::MissingPredictor,
        DropReason::MissingAnthropometry,
        DropReason::InvalidAnthropometry,
        DropReason::LabelUnavailable,
    ];
}

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("input table has no column {0:?} required by the schema")]
    MissingColumn(String),
    #[error("no rows survived cohort construction")]
    EmptyCohort,
    #[error("invalid schema: {0}")]
    Schema(#[from] super::SchemaError),
    #[error("cohort file row {row}: {reason}")]
    BadCohortFile { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildRecord {
    pub id: String,
    pub age_years: f64,
    pub sex: Sex,
    /// Recoded predictor values keyed by uppercase source name.
    pub predictors: BTreeMap<String, Recoded>,
    pub bmi: f64,
    pub bmi_z: Option<f64>,
    pub bmi_percentile: Option<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_rows: usize,
    pub kept: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    /// Imputed cell counts per predictor (median-impute policy only).
    pub imputed: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Cleaned child-level records plus the predictor specs they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub predictors: Vec<VariableEntry>,
    pub records: Vec<ChildRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortBuild {
    pub cohort: Cohort,
    pub report: IngestReport,
}

enum Outcome {
    Keep(Candidate),
    Drop(DropReason),
}

struct Candidate {
    id: String,
    age_years: f64,
    sex: Sex,
    values: BTreeMap<String, Option<Recoded>>,
    bmi: f64,
}

fn recode_cell(cell: &Cell, entry: &VariableEntry) -> Option<Recoded> {
    let raw = cell.as_f64()?;
    if entry.missing_codes.contains(&raw) {
        return None;
    }
    entry.recode.apply(raw)
}

fn positive(cell: &Cell) -> Result<f64, DropReason> {
    match cell {
        Cell::Numeric(v) if *v > 0.0 && v.is_finite() => Ok(*v),
        Cell::Numeric(_) => Err(DropReason::InvalidAnthropometry),
        _ => Err(DropReason::MissingAnthropometry),
    }
}

/// Build the cohort. Checks run in a fixed order and each dropped row is
/// counted under the first failing reason: age, predictors, anthropometry,
/// label.
pub fn build_cohort(
    table: &RawTable,
    schema: &VariableSchema,
    growth: &GrowthReference,
) -> Result<CohortBuild, CohortError> {
    schema.validate()?;
    let column = |source: &str| {
        table
            .column_index(source)
            .ok_or_else(|| CohortError::MissingColumn(source.to_string()))
    };
    let predictors: Vec<VariableEntry> = schema.predictors().into_iter().cloned().collect();
    let pred_cols = predictors
        .iter()
        .map(|e| column(&e.source))
        .collect::<Result<Vec<_>, _>>()?;
    let weight_col = column(&schema.role(VariableRole::WeightKg).unwrap().source)?;
    let height_col = column(&schema.role(VariableRole::HeightCm).unwrap().source)?;
    let id_col = schema
        .role(VariableRole::Id)
        .map(|e| column(&e.source))
        .transpose()?;
    let age_idx = predictors.iter().position(|e| e.source.eq_ignore_ascii_case(AGE_VARIABLE)).unwrap();
    let sex_idx = predictors.iter().position(|e| e.source.eq_ignore_ascii_case(SEX_VARIABLE)).unwrap();
    let impute = schema.missing_policy == MissingPolicy::MedianImpute;

    let classify = |i: usize, row: &[Cell]| -> Outcome {
        let age = match row[pred_cols[age_idx]].as_f64() {
            Some(a) if (MIN_AGE_YEARS..=MAX_AGE_YEARS).contains(&a) => a,
            Some(_) => return Outcome::Drop(DropReason::AgeOutOfRange),
            None => return Outcome::Drop(DropReason::MissingPredictor),
        };
        let sex = match recode_cell(&row[pred_cols[sex_idx]], &predictors[sex_idx]) {
            Some(Recoded::Level(l)) => match parse_sex_label(&l) {
                Some(s) => s,
                None => return Outcome::Drop(DropReason::MissingPredictor),
            },
            _ => return Outcome::Drop(DropReason::MissingPredictor),
        };
        let mut values = BTreeMap::new();
        for (e, &c) in predictors.iter().zip(&pred_cols) {
            let v = recode_cell(&row[c], e);
            if v.is_none() && !impute {
                return Outcome::Drop(DropReason::MissingPredictor);
            }
            values.insert(e.source.to_uppercase(), v);
        }
        let (weight, height) = match (positive(&row[weight_col]), positive(&row[height_col])) {
            (Ok(w), Ok(h)) => (w, h),
            (Err(r), _) | (_, Err(r)) => return Outcome::Drop(r),
        };
        let id = id_col
            .and_then(|c| row[c].key_string())
            .unwrap_or_else(|| (i + 1).to_string());
        Outcome::Keep(Candidate {
            id,
            age_years: age,
            sex,
            values,
            bmi: growth::bmi(weight, height).expect("inputs checked positive"),
        })
    };

    let mut dropped: BTreeMap<DropReason, usize> = DropReason::ALL.iter().map(|&r| (r, 0)).collect();
    let mut candidates = Vec::new();
    for (i, row) in table.rows().iter().enumerate() {
        match classify(i, row) {
            Outcome::Keep(c) => candidates.push(c),
            Outcome::Drop(r) => *dropped.get_mut(&r).unwrap() += 1,
        }
    }

    let mut imputed = BTreeMap::new();
    if impute {
        for e in &predictors {
            let key = e.source.to_uppercase();
            let fill = impute_value(e, candidates.iter().filter_map(|c| c.values[&key].as_ref()));
            let mut count = 0;
            for c in candidates.iter_mut() {
                let slot = c.values.get_mut(&key).unwrap();
                if slot.is_none() {
                    *slot = fill.clone();
                    count += 1;
                }
            }
            if count > 0 {
                imputed.insert(key, count);
            }
        }
    }

    let mut records = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.values.values().any(Option::is_none) {
            // Only reachable when a predictor had no observed value at all.
            *dropped.get_mut(&DropReason::MissingPredictor).unwrap() += 1;
            continue;
        }
        let outcome = growth::label_obesity(c.sex, c.age_years, c.bmi, growth);
        let (bmi_z, bmi_percentile, label) = match (schema.label_mode, outcome) {
            (LabelMode::ChildPercentile, Ok(o)) => (Some(o.z), Some(o.percentile), o.label),
            (LabelMode::ChildPercentile, Err(_)) => {
                *dropped.get_mut(&DropReason::LabelUnavailable).unwrap() += 1;
                continue;
            }
            (LabelMode::AdultBmi30, o) => {
                let o = o.ok();
                (o.map(|o| o.z), o.map(|o| o.percentile), growth::label_adult_bmi(c.bmi))
            }
        };
        records.push(ChildRecord {
            id: c.id,
            age_years: c.age_years,
            sex: c.sex,
            predictors: c.values.into_iter().map(|(k, v)| (k, v.unwrap())).collect(),
            bmi: c.bmi,
            bmi_z,
            bmi_percentile,
            label,
        });
    }
    if records.is_empty() {
        return Err(CohortError::EmptyCohort);
    }
    let report = IngestReport {
        input_rows: table.n_rows(),
        kept: records.len(),
        dropped,
        imputed,
    };
    Ok(CohortBuild {
        cohort: Cohort { predictors, records },
        report,
    })
}

/// Median of observed numeric values, or the most frequent level (first
/// declared level on ties) for categories.
fn impute_value<'a>(entry: &VariableEntry, observed: impl Iterator<Item = &'a Recoded>) -> Option<Recoded> {
    match &entry.recode {
        Recode::Category { levels } => {
            let mut counts = vec![0usize; levels.len()];
            for v in observed {
                if let Recoded::Level(l) = v {
                    if let Some(i) = levels.iter().position(|x| &x.label == l) {
                        counts[i] += 1;
                    }
                }
            }
            let best = counts.iter().max().copied().filter(|&c| c > 0)?;
            let i = counts.iter().position(|&c| c == best).unwrap();
            Some(Recoded::Level(levels[i].label.clone()))
        }
        _ => {
            let mut xs: Vec<f64> = observed
                .filter_map(|v| match v {
                    Recoded::Number(x) => Some(*x),
                    Recoded::Level(_) => None,
                })
                .collect();
            if xs.is_empty() {
                return None;
            }
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            let median = if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) };
            Some(Recoded::Number(median))
        }
    }
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// CSV rendering: id, predictors in canonical order, bmi, bmi_z,
    /// bmi_percentile, label. Floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for e in &self.predictors {
            out.push(',');
            out.push_str(&e.source.to_uppercase());
        }
        out.push_str(",bmi,bmi_z,bmi_percentile,label\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&csv_field(&r.id));
            for e in &self.predictors {
                out.push(',');
                match &r.predictors[&e.source.to_uppercase()] {
                    Recoded::Number(x) => write!(out, "{x}").unwrap(),
                    Recoded::Level(l) => out.push_str(&csv_field(l)),
                }
            }
            writeln!(
                out,
                ",{},{},{},{}",
                r.bmi,
                opt(r.bmi_z),
                opt(r.bmi_percentile),
                r.label
            )
            .unwrap();
        }
        out
    }

    /// Reload a cohort written by [`Cohort::to_csv`].
    pub fn from_table(table: &RawTable, schema: &VariableSchema) -> Result<Cohort, CohortError> {
        let col = |name: &str| {
            table
                .column_index(name)
                .ok_or_else(|| CohortError::MissingColumn(name.to_string()))
        };
        let predictors: Vec<VariableEntry> = schema.predictors().into_iter().cloned().collect();
        let pred_cols = predictors.iter().map(|e| col(&e.source)).collect::<Result<Vec<_>, _>>()?;
        let (c_id, c_bmi, c_z, c_pct, c_label) =
            (col("id")?, col("bmi")?, col("bmi_z")?, col("bmi_percentile")?, col("label")?);
        let mut records = Vec::with_capacity(table.n_rows());
        for (i, row) in table.rows().iter().enumerate() {
            let bad = |reason: &str| CohortError::BadCohortFile { row: i + 2, reason: reason.to_string() };
            let mut values = BTreeMap::new();
            for (e, &c) in predictors.iter().zip(&pred_cols) {
                let v = match (&e.recode, &row[c]) {
                    (Recode::Category { .. }, cell) => Recoded::Level(cell.key_string().ok_or_else(|| bad("empty category"))?),
                    (_, Cell::Numeric(x)) => Recoded::Number(*x),
                    _ => return Err(bad(&format!("non-numeric {}", e.source))),
                };
                values.insert(e.source.to_uppercase(), v);
            }
            let age_years = match values.get(AGE_VARIABLE) {
                Some(Recoded::Number(a)) => *a,
                _ => return Err(bad("missing age")),
            };
            let sex = match values.get(SEX_VARIABLE) {
                Some(Recoded::Level(l)) => parse_sex_label(l).ok_or_else(|| bad("unknown sex level"))?,
                _ => return Err(bad("missing sex")),
            };
            let label = match row[c_label].as_f64() {
                Some(v) if v == 0.0 || v == 1.0 => v as u8,
                _ => return Err(bad("label must be 0 or 1")),
            };
            records.push(ChildRecord {
                id: row[c_id].key_string().ok_or_else(|| bad("empty id"))?,
                age_years,
                sex,
                predictors: values,
                bmi: row[c_bmi].as_f64().ok_or_else(|| bad("missing bmi"))?,
                bmi_z: row[c_z].as_f64(),
                bmi_percentile: row[c_pct].as_f64(),
                label,
            });
        }
        if records.is_empty() {
            return Err(CohortError::EmptyCohort);
        }
        Ok(Cohort { predictors, records })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
