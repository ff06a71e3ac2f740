//! Variable schema for NHANES-style microdata and the macro indicator list.
//! Loaded from a JSON schema file; see `fixtures/schema.json`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Predictor variables the micro model may use.
pub const NHANES_PREDICTORS: [&str; 7] = [
    "RIDAGEYR", "RIAGENDR", "RIDRETH3", "INDFMPIR", "DMDHHSIZ", "DMDHREDZ", "DMDBORN4",
];

pub const AGE_VARIABLE: &str = "RIDAGEYR";
pub const SEX_VARIABLE: &str = "RIAGENDR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableRole {
    Predictor,
    OutcomeInput,
    Id,
    WeightKg,
    HeightCm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLevel {
    pub code: f64,
    pub label: String,
}

/// How a raw numeric code becomes a model value. Codes outside the declared
/// levels are treated as missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recode {
    #[default]
    Numeric,
    /// Unordered category, one-hot encoded downstream in level order.
    Category { levels: Vec<CategoryLevel> },
    /// Ordered bins; the value is the 1-based position of the code in `order`.
    Ordinal { order: Vec<f64> },
    Binary { positive: Vec<f64>, negative: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recoded {
    Number(f64),
    Level(String),
}

impl Recode {
    /// Apply the rule to a raw value; `None` means "treat as missing".
    pub fn apply(&self, raw: f64) -> Option<Recoded> {
        match self {
            Recode::Numeric => Some(Recoded::Number(raw)),
            Recode::Category { levels } => levels
                .iter()
                .find(|l| l.code == raw)
                .map(|l| Recoded::Level(l.label.clone())),
            Recode::Ordinal { order } => order
                .iter()
                .position(|&c| c == raw)
                .map(|i| Recoded::Number((i + 1) as f64)),
            Recode::Binary { positive, negative } => {
                if positive.contains(&raw) {
                    Some(Recoded::Number(1.0))
                } else if negative.contains(&raw) {
                    Some(Recoded::Number(0.0))
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub source: String,
    pub role: VariableRole,
    #[serde(default)]
    pub recode: Recode,
    /// Raw codes meaning refused / don't know / not collected.
    #[serde(default)]
    pub missing_codes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Drop,
    /// Median for numeric/ordinal/binary predictors, most frequent level for
    /// categories. Anthropometry and sex are never imputed.
    MedianImpute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// BMI-for-age percentile >= 95 against the growth reference.
    #[default]
    ChildPercentile,
    /// Adult cut-off BMI >= 30 kg/m^2. Not used for the child analysis.
    AdultBmi30,
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("schema needs exactly one {role} entry, found {found}")]
    RoleCount { role: &'static str, found: usize },
    #[error("{0:?} is not a supported predictor (allowed: {NHANES_PREDICTORS:?})")]
    UnknownPredictor(String),
    #[error("required predictor {0} is absent from the schema")]
    RequiredPredictor(&'static str),
    #[error("variable {0:?} listed more than once")]
    Duplicate(String),
    #[error("sex variable must be a category with levels labelled \"male\" and \"female\"")]
    SexLevels,
    #[error("invalid schema JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub entries: Vec<VariableEntry>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    #[serde(default)]
    pub label_mode: LabelMode,
}

impl VariableSchema {
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.source.to_uppercase()) {
                return Err(SchemaError::Duplicate(e.source.clone()));
            }
            if e.role == VariableRole::Predictor
                && !NHANES_PREDICTORS.contains(&e.source.to_uppercase().as_str())
            {
                return Err(SchemaError::UnknownPredictor(e.source.clone()));
            }
        }
        for (role, name) in [
            (VariableRole::WeightKg, "weight_kg"),
            (VariableRole::HeightCm, "height_cm"),
        ] {
            let found = self.entries.iter().filter(|e| e.role == role).count();
            if found != 1 {
                return Err(SchemaError::RoleCount { role: name, found });
            }
        }
        let ids = self.entries.iter().filter(|e| e.role == VariableRole::Id).count();
        if ids > 1 {
            return Err(SchemaError::RoleCount { role: "id", found: ids });
        }
        for required in [AGE_VARIABLE, SEX_VARIABLE] {
            if self.predictor(required).is_none() {
                return Err(SchemaError::RequiredPredictor(required));
            }
        }
        match &self.predictor(SEX_VARIABLE).unwrap().recode {
            Recode::Category { levels }
                if levels.iter().all(|l| parse_sex_label(&l.label).is_some()) => {}
            _ => return Err(SchemaError::SexLevels),
        }
        Ok(())
    }

    pub fn predictor(&self, source: &str) -> Option<&VariableEntry> {
        self.entries
            .iter()
            .find(|e| e.role == VariableRole::Predictor && e.source.eq_ignore_ascii_case(source))
    }

    /// Predictors in canonical order.
    pub fn predictors(&self) -> Vec<&VariableEntry> {
        NHANES_PREDICTORS
            .iter()
            .filter_map(|name| self.predictor(name))
            .collect()
    }

    pub fn role(&self, role: VariableRole) -> Option<&VariableEntry> {
        self.entries.iter().find(|e| e.role == role)
    }
}

pub(crate) fn parse_sex_label(label: &str) -> Option<crate::growth::Sex> {
    match label.to_ascii_lowercase().as_str() {
        "male" => Some(crate::growth::Sex::Male),
        "female" => Some(crate::growth::Sex::Female),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    VulnerabilityIncreasing,
    VulnerabilityDecreasing,
}

/// One macro indicator: where it comes from and which way is "worse".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub name: String,
    /// Dataset key, e.g. `usda` or `epa`.
    pub source: String,
    pub column: String,
    pub unit: String,
    pub direction: Direction,
}

/// On-disk schema document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub version: u32,
    #[serde(flatten)]
    pub variables: VariableSchema,
    #[serde(default)]
    pub indicators: Vec<IndicatorSpec>,
}

impl SchemaFile {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SchemaError> {
        let file: SchemaFile =
            serde_json::from_slice(bytes).map_err(|e| SchemaError::Json(e.to_string()))?;
        file.variables.validate()?;
        Ok(file)
    }
}
