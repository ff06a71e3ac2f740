//! BMI, LMS z-scores, BMI-for-age percentiles and the obesity label.
//!
//! A growth reference is a table of (sex, age in months, L, M, S) rows in
//! the CDC `bmiagerev.csv` convention. Parameters are interpolated linearly
//! in age between bracketing rows.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use libm::erfc;
use thiserror::Error;

use crate::ingest::{parse_csv, Cell, CsvOptions};

/// Percentile at or above which a child is labelled obese.
pub const OBESITY_PERCENTILE: f64 = 95.0;
/// Slack on the percentile comparison so a BMI built exactly at the
/// threshold is not lost to rounding in the LMS round trip.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;
/// Adult BMI cut-off (kg/m^2), optional labelling mode only.
pub const ADULT_OBESITY_BMI: f64 = 30.0;

const L_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GrowthError {
    #[error("non-positive input: {0}")]
    NonPositiveInput(&'static str),
    #[error("age {age_months} months is outside the reference range for {sex}")]
    AgeOutOfReferenceRange { sex: Sex, age_months: f64 },
    #[error("z-score {z} is outside the LMS domain for this row (1 + L*S*z <= 0)")]
    OutsideLmsDomain { z: f64 },
    #[error("invalid growth reference: {0}")]
    InvalidReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsRow {
    pub sex: Sex,
    pub age_months: f64,
    pub l: f64,
    pub m: f64,
    pub s: f64,
}

/// Sex-specific LMS tables, immutable after load.
#[derive(Debug, Clone)]
pub struct GrowthReference {
    male: Vec<LmsRow>,
    female: Vec<LmsRow>,
    checksum: String,
}

fn parse_sex_cell(cell: &Cell) -> Option<Sex> {
    match cell {
        Cell::Numeric(v) if *v == 1.0 => Some(Sex::Male),
        Cell::Numeric(v) if *v == 2.0 => Some(Sex::Female),
        Cell::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Some(Sex::Male),
            "female" | "f" => Some(Sex::Female),
            _ => None,
        },
        _ => None,
    }
}

impl GrowthReference {
    /// Load a CSV with columns `sex, agemos, L, M, S` (case-insensitive;
    /// extra columns such as the CDC percentile columns are ignored). Sex is
    /// `1`/`2` or `male`/`female`.
    pub fn from_csv(bytes: &[u8]) -> Result<Self, GrowthError> {
        let bad = |msg: String| GrowthError::InvalidReference(msg);
        let table = parse_csv(bytes, &CsvOptions::default()).map_err(|e| bad(e.to_string()))?;
        let col = |name: &str| {
            table
                .column_index(name)
                .ok_or_else(|| bad(format!("missing column {name:?}")))
        };
        let (c_sex, c_age, c_l, c_m, c_s) = (col("sex")?, col("agemos")?, col("L")?, col("M")?, col("S")?);
        let mut rows = Vec::with_capacity(table.n_rows());
        for (i, r) in table.rows().iter().enumerate() {
            let num = |c: usize, what: &str| {
                r[c].as_f64()
                    .ok_or_else(|| bad(format!("row {}: {what} is not numeric", i + 2)))
            };
            let sex = parse_sex_cell(&r[c_sex])
                .ok_or_else(|| bad(format!("row {}: unrecognised sex", i + 2)))?;
            rows.push(LmsRow {
                sex,
                age_months: num(c_age, "agemos")?,
                l: num(c_l, "L")?,
                m: num(c_m, "M")?,
                s: num(c_s, "S")?,
            });
        }
        let mut reference = Self::from_rows(rows)?;
        reference.checksum = hex::encode(Sha256::digest(bytes));
        Ok(reference)
    }

    pub fn from_rows(rows: Vec<LmsRow>) -> Result<Self, GrowthError> {
        let bad = |msg: String| GrowthError::InvalidReference(msg);
        let (male, female): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.sex == Sex::Male);
        for (sex, table) in [(Sex::Male, &male), (Sex::Female, &female)] {
            if table.len() < 2 {
                return Err(bad(format!("fewer than two rows for {sex}")));
            }
            for r in table {
                if !(r.m > 0.0 && r.s > 0.0 && r.l.is_finite() && r.age_months.is_finite()) {
                    return Err(bad(format!("{sex} row at {} months needs M > 0, S > 0", r.age_months)));
                }
            }
            if table.windows(2).any(|w| w[1].age_months <= w[0].age_months) {
                return Err(bad(format!("{sex} rows are not strictly increasing in age")));
            }
        }
        Ok(GrowthReference {
            male,
            female,
            checksum: String::new(),
        })
    }

    /// SHA-256 of the source bytes (empty when built from rows).
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn rows(&self, sex: Sex) -> &[LmsRow] {
        match sex {
            Sex::Male => &self.male,
            Sex::Female => &self.female,
        }
    }

    /// LMS parameters at an age, linearly interpolated between bracketing
    /// rows.
    pub fn lms_at(&self, sex: Sex, age_months: f64) -> Result<LmsRow, GrowthError> {
        let rows = self.rows(sex);
        let out_of_range = GrowthError::AgeOutOfReferenceRange { sex, age_months };
        let first = rows.first().ok_or(out_of_range.clone())?;
        let last = rows.last().ok_or(out_of_range.clone())?;
        if !(age_months >= first.age_months && age_months <= last.age_months) {
            return Err(out_of_range);
        }
        let upper = rows.partition_point(|r| r.age_months < age_months);
        let hi = rows[upper];
        if hi.age_months == age_months {
            return Ok(hi);
        }
        let lo = rows[upper - 1];
        let t = (age_months - lo.age_months) / (hi.age_months - lo.age_months);
        let lerp = |a: f64, b: f64| a + t * (b - a);
        Ok(LmsRow {
            sex,
            age_months,
            l: lerp(lo.l, hi.l),
            m: lerp(lo.m, hi.m),
            s: lerp(lo.s, hi.s),
        })
    }
}

pub fn bmi(weight_kg: f64, height_cm: f64) -> Result<f64, GrowthError> {
    if !(weight_kg > 0.0) {
        return Err(GrowthError::NonPositiveInput("weight"));
    }
    if !(height_cm > 0.0) {
        return Err(GrowthError::NonPositiveInput("height"));
    }
    let metres = height_cm / 100.0;
    Ok(weight_kg / (metres * metres))
}

/// LMS z-score of a measurement. The power branch is evaluated with
/// `expm1` so it stays accurate as L approaches the log branch.
pub fn lms_zscore(x: f64, row: &LmsRow) -> Result<f64, GrowthError> {
    if !(x > 0.0) {
        return Err(GrowthError::NonPositiveInput("measurement"));
    }
    let log_ratio = (x / row.m).ln();
    if row.l.abs() > L_ZERO {
        Ok((row.l * log_ratio).exp_m1() / (row.l * row.s))
    } else {
        Ok(log_ratio / row.s)
    }
}

/// Inverse of [`lms_zscore`]: the measurement sitting at `z`.
pub fn lms_value(z: f64, row: &LmsRow) -> Result<f64, GrowthError> {
    if row.l.abs() > L_ZERO {
        let base = 1.0 + row.l * row.s * z;
        if !(base > 0.0) {
            return Err(GrowthError::OutsideLmsDomain { z });
        }
        Ok(row.m * (base.ln() / row.l).exp())
    } else {
        Ok(row.m * (row.s * z).exp())
    }
}

/// Standard normal CDF via the musl `erfc` port in `libm` (absolute error
/// about 1e-16 over [-8, 8]), which avoids the cancellation of `1 + erf`
/// in the lower tail.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `100 * Phi(z)`.
pub fn percentile(z: f64) -> f64 {
    100.0 * normal_cdf(z)
}

/// Half-month row convention: `floor(12 * years) + 0.5`.
pub fn age_months(age_years: f64) -> f64 {
    (age_years * 12.0).floor() + 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub z: f64,
    pub percentile: f64,
    pub label: u8,
}

/// Obesity label for a child aged 2-19: 1 iff BMI-for-age percentile >= 95.
pub fn label_obesity(
    sex: Sex,
    age_years: f64,
    bmi: f64,
    growth: &GrowthReference,
) -> Result<LabelOutcome, GrowthError> {
    let row = growth.lms_at(sex, age_months(age_years))?;
    let z = lms_zscore(bmi, &row)?;
    let pct = percentile(z);
    Ok(LabelOutcome {
        z,
        percentile: pct,
        label: u8::from(pct >= OBESITY_PERCENTILE - BOUNDARY_TOLERANCE),
    })
}

/// Adult definition, BMI >= 30. Available as a labelling mode; the child
/// pipeline does not use it.
pub fn label_adult_bmi(bmi: f64) -> u8 {
    u8::from(bmi >= ADULT_OBESITY_BMI)
}
