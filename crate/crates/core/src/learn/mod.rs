//! Feature encoding and the four classifiers: logistic regression, a random
//! forest of CART trees, and one second-order gradient boosting engine with
//! level-wise or leaf-wise growth.

mod forest;
mod gbdt;
mod logistic;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Cohort, Recode, Recoded};

pub use forest::{fit_forest, Forest, ForestParams};
pub use gbdt::{fit_gbdt, BoostedEnsemble, GbdtFit, GbdtParams, Growth};
pub use logistic::{
    fit_logistic, log_loss, logistic_gradient, logistic_objective, sigmoid, LogisticConfig, LogisticFit, LogisticModel,
};
pub use tree::{fit_tree, Criterion, TreeFit, TreeNode, TreeParams, TreeTarget};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature layout differs from the training layout")]
    LayoutMismatch,
    #[error("labels contain a single class")]
    SingleClassInput,
    #[error("{n} rows is too few (need at least {required})")]
    InsufficientRows { n: usize, required: usize },
    #[error("all hessians are below 1e-12")]
    NumericalDegeneracy,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("one-hot group {group:?} does not sum to 1 in row {row}")]
    OneHotGroup { group: String, row: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid model artifact: {0}")]
    Artifact(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    OneHot { level: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    /// Source variable; one-hot members share their group.
    pub group: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub columns: Vec<ColumnMeta>,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Column indices per group, groups in order of first appearance.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, c) in self.columns.iter().enumerate() {
            match out.iter_mut().find(|(g, _)| *g == c.group) {
                Some((_, cols)) => cols.push(j),
                None => out.push((c.group.clone(), vec![j])),
            }
        }
        out
    }
}

/// Dense row-major n x d matrix with column metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    layout: FeatureLayout,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(layout: FeatureLayout, values: Vec<f64>) -> Result<Self, LearnError> {
        let d = layout.len();
        if d == 0 || values.len() % d != 0 {
            return Err(LearnError::DimensionMismatch { expected: d, found: values.len() });
        }
        let n = values.len() / d;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite { row: k / d, col: k % d });
        }
        let m = FeatureMatrix { n, layout, values };
        for (group, cols) in m.layout.groups() {
            if !matches!(m.layout.columns[cols[0]].kind, ColumnKind::OneHot { .. }) {
                continue;
            }
            for i in 0..n {
                let row = m.row(i);
                if cols.iter().map(|&j| row[j]).sum::<f64>() != 1.0 {
                    return Err(LearnError::OneHotGroup { group, row: i });
                }
            }
        }
        Ok(m)
    }

    /// Unnamed numeric columns `x0..x{d-1}`; convenient for tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LearnError> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(LearnError::DimensionMismatch { expected: d, found: r.len() });
        }
        let layout = FeatureLayout {
            columns: (0..d)
                .map(|j| ColumnMeta {
                    name: format!("x{j}"),
                    group: format!("x{j}"),
                    kind: ColumnKind::Numeric,
                })
                .collect(),
        };
        Self::new(layout, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d())
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.d());
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: idx.len(),
            layout: self.layout.clone(),
            values,
        }
    }
}

/// Encode a cohort: categories one-hot in declared level order, everything
/// else (numeric, ordinal rank, binary) as a single numeric column.
pub fn encode_cohort(cohort: &Cohort) -> Result<(FeatureMatrix, Vec<u8>), LearnError> {
    let mut columns = Vec::new();
    for e in &cohort.predictors {
        let group = e.source.to_uppercase();
        match &e.recode {
            Recode::Category { levels } => columns.extend(levels.iter().map(|l| ColumnMeta {
                name: format!("{group}={}", l.label),
                group: group.clone(),
                kind: ColumnKind::OneHot { level: l.label.clone() },
            })),
            _ => columns.push(ColumnMeta {
                name: group.clone(),
                group,
                kind: ColumnKind::Numeric,
            }),
        }
    }
    let mut values = Vec::with_capacity(cohort.len() * columns.len());
    for r in &cohort.records {
        for c in &columns {
            let v = match (&c.kind, &r.predictors[&c.group]) {
                (ColumnKind::Numeric, Recoded::Number(x)) => *x,
                (ColumnKind::OneHot { level }, Recoded::Level(l)) => f64::from(u8::from(l == level)),
                _ => {
                    return Err(LearnError::InvalidParameter(format!(
                        "record {} has a value of the wrong kind for {}",
                        r.id, c.group
                    )))
                }
            };
            values.push(v);
        }
    }
    let x = FeatureMatrix::new(FeatureLayout { columns }, values)?;
    Ok((x, cohort.labels()))
}

pub(crate) fn check_labels(n: usize, y: &[u8]) -> Result<(), LearnError> {
    if y.len() != n {
        return Err(LearnError::LengthMismatch(n, y.len()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if y.iter().any(|&v| v > 1) {
        return Err(LearnError::InvalidParameter("labels must be 0 or 1".into()));
    }
    if pos == 0 || pos == n {
        return Err(LearnError::SingleClassInput);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    #[default]
    None,
    /// Each class contributes half of the total weight.
    Balanced,
}

impl ClassWeight {
    pub fn sample_weights(self, y: &[u8]) -> Vec<f64> {
        match self {
            ClassWeight::None => vec![1.0; y.len()],
            ClassWeight::Balanced => {
                let n = y.len() as f64;
                let pos = y.iter().filter(|&&v| v == 1).count() as f64;
                let (wp, wn) = (n / (2.0 * pos), n / (2.0 * (n - pos)));
                y.iter().map(|&v| if v == 1 { wp } else { wn }).collect()
            }
        }
    }
}

/// Probability interface shared by every fitted model.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;

    /// P(y = 1 | x); `x` must have `n_features()` entries.
    fn predict_row(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Logistic(LogisticModel),
    Forest(Forest),
    Boosted(BoostedEnsemble),
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Logistic(m) => m.n_features(),
            Model::Forest(m) => m.n_features(),
            Model::Boosted(m) => m.n_features(),
        }
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            Model::Logistic(m) => m.predict_row(x),
            Model::Forest(m) => m.predict_row(x),
            Model::Boosted(m) => m.predict_row(x),
        }
    }
}

/// Versioned, self-describing model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub name: String,
    pub layout: FeatureLayout,
    pub model: Model,
}

impl ModelArtifact {
    pub fn new(name: impl Into<String>, layout: FeatureLayout, model: Model) -> Self {
        ModelArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            name: name.into(),
            layout,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model artifacts contain only finite numbers")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let a: ModelArtifact = serde_json::from_str(text).map_err(|e| LearnError::Artifact(e.to_string()))?;
        if a.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(LearnError::Artifact(format!("unsupported format_version {}", a.format_version)));
        }
        if a.model.n_features() != a.layout.len() {
            return Err(LearnError::Artifact("layout width does not match the model".into()));
        }
        Ok(a)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.layout.len() {
            return Err(LearnError::DimensionMismatch { expected: self.layout.len(), found: x.len() });
        }
        Ok(self.model.predict_row(x))
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>, LearnError> {
        if x.layout() != &self.layout {
            return Err(LearnError::LayoutMismatch);
        }
        Ok(x.rows().map(|r| self.model.predict_row(r)).collect())
    }
}

impl Predictor for ModelArtifact {
    fn n_features(&self) -> usize {
        self.layout.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.model.predict_row(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_one_hot() {
        assert!(matches!(
            FeatureMatrix::from_rows(&[vec![1.0, f64::NAN]]),
            Err(LearnError::NonFinite { row: 0, col: 1 })
        ));
        let layout = FeatureLayout {
            columns: ["a", "b"]
                .map(|l| ColumnMeta {
                    name: format!("G={l}"),
                    group: "G".into(),
                    kind: ColumnKind::OneHot { level: l.into() },
                })
                .to_vec(),
        };
        assert!(FeatureMatrix::new(layout.clone(), vec![1.0, 0.0, 0.0, 1.0]).is_ok());
        assert_eq!(
            FeatureMatrix::new(layout, vec![1.0, 1.0]),
            Err(LearnError::OneHotGroup { group: "G".into(), row: 0 })
        );
    }

    #[test]
    fn balanced_weights_split_mass_evenly() {
        let w = ClassWeight::Balanced.sample_weights(&[1, 0, 0, 0]);
        assert_eq!(w, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn artifact_checks_dimensions() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let art = ModelArtifact::new(
            "lr",
            x.layout().clone(),
            Model::Logistic(LogisticModel { beta0: 0.0, beta: vec![1.0] }),
        );
        assert_eq!(
            art.predict_proba(&[1.0, 2.0]),
            Err(LearnError::DimensionMismatch { expected: 1, found: 2 })
        );
        let other = FeatureMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(art.predict_matrix(&other), Err(LearnError::LayoutMismatch));
        assert_eq!(ModelArtifact::from_json(&art.to_json()).unwrap(), art);
    }
}
