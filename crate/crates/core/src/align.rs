//! Micro-macro alignment: the national mean predicted risk, its association
//! with state EnvScore, and the state overlay table.
//!
//! Individual records cannot be linked to states, so by default every state
//! carries the same national reference and any association against it is
//! reported as undefined. An opt-in stratified mode reweights stratum-level
//! mean predictions by user-supplied state margins; its output is synthetic
//! and labelled as such.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::StateIndicatorTable;
use crate::macroindex::EnvScoreTable;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("no predictions to average")]
    EmptyPredictions,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("state {state:?}: margins reference stratum {stratum:?} with no predictions")]
    UnknownStratum { state: String, stratum: String },
    #[error("state {0:?}: margins must be non-negative with a positive total")]
    BadMargins(String),
}

pub fn national_mean_risk(predictions: &[f64]) -> Result<f64, AlignError> {
    if predictions.is_empty() {
        return Err(AlignError::EmptyPredictions);
    }
    Ok(predictions.iter().sum::<f64>() / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub method: CorrelationMethod,
    pub n: usize,
    /// Absent when either series has zero variance.
    pub statistic: Option<f64>,
    pub defined: bool,
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

fn constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

pub fn cross_scale_association(a: &[f64], b: &[f64], method: CorrelationMethod) -> Result<Association, AlignError> {
    if a.len() != b.len() {
        return Err(AlignError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 || constant(a) || constant(b) {
        return Ok(Association { method, n, statistic: None, defined: false });
    }
    let r = match method {
        CorrelationMethod::Pearson => pearson(a, b),
        CorrelationMethod::Spearman => pearson(&average_ranks(a), &average_ranks(b)),
    };
    let defined = r.is_finite();
    Ok(Association { method, n, statistic: defined.then_some(r), defined })
}

/// Synthetic per-state reference: the mean prediction within each stratum,
/// mixed by each state's (normalised) stratum margins.
pub fn stratified_reference(
    predictions: &[f64],
    strata: &[String],
    margins: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<BTreeMap<String, f64>, AlignError> {
    if predictions.len() != strata.len() {
        return Err(AlignError::LengthMismatch(predictions.len(), strata.len()));
    }
    if predictions.is_empty() {
        return Err(AlignError::EmptyPredictions);
    }
    let mut by_stratum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (p, s) in predictions.iter().zip(strata) {
        let e = by_stratum.entry(s).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    }
    let mut out = BTreeMap::new();
    for (state, m) in margins {
        let total: f64 = m.values().sum();
        if !(total > 0.0) || m.values().any(|v| *v < 0.0) {
            return Err(AlignError::BadMargins(state.clone()));
        }
        let mut acc = 0.0;
        for (stratum, w) in m {
            let &(sum, count) = by_stratum.get(stratum.as_str()).ok_or_else(|| AlignError::UnknownStratum {
                state: state.clone(),
                stratum: stratum.clone(),
            })?;
            acc += w / total * (sum / count as f64);
        }
        out.insert(state.clone(), acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RiskReference {
    /// One national value broadcast to every state.
    National { value: f64 },
    /// Synthetic per-state values from demographic reweighting.
    StratifiedSynthetic { values: BTreeMap<String, f64> },
}

impl RiskReference {
    pub fn for_state(&self, state: &str) -> Option<f64> {
        match self {
            RiskReference::National { value } => Some(*value),
            RiskReference::StratifiedSynthetic { values } => values.get(state).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayColumn {
    /// Heading in the report, e.g. `LILA`.
    pub label: String,
    /// Indicator name in the state table.
    pub indicator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub state: String,
    pub env_rank: usize,
    pub nhanes_risk: f64,
    pub env_score: f64,
    pub cluster_label: Option<String>,
    /// Raw state-level values in `columns` order.
    pub indicators: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMismatch {
    pub state: String,
    pub missing_from: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub reference: RiskReference,
    pub columns: Vec<OverlayColumn>,
    pub rows: Vec<OverlayRow>,
    pub association: Association,
    pub n_states: usize,
    pub dropped_states: Vec<KeyMismatch>,
}

/// Join EnvScore, cluster labels, raw indicators and the risk reference on
/// the states common to all of them, and keep the `top_n` highest EnvScore
/// states (EnvScore rank order). States missing from any input are listed in
/// `dropped_states`.
pub fn overlay_table(
    scores: &EnvScoreTable,
    clusters: &BTreeMap<String, String>,
    indicators: &StateIndicatorTable,
    reference: &RiskReference,
    columns: &[OverlayColumn],
    top_n: usize,
    method: CorrelationMethod,
) -> Result<AlignmentReport, AlignError> {
    let score_states: BTreeSet<&str> = scores.rows.iter().map(|r| r.state.as_str()).collect();
    let cluster_states: BTreeSet<&str> = clusters.keys().map(String::as_str).collect();
    let indicator_states: BTreeSet<&str> = indicators.states.iter().map(String::as_str).collect();
    let all: BTreeSet<&str> = score_states
        .iter()
        .chain(&cluster_states)
        .chain(&indicator_states)
        .copied()
        .collect();
    let mut dropped = Vec::new();
    for s in &all {
        let mut missing = Vec::new();
        for (name, set) in [("envscore", &score_states), ("clusters", &cluster_states), ("indicators", &indicator_states)] {
            if !set.contains(s) {
                missing.push(name.to_string());
            }
        }
        if reference.for_state(s).is_none() {
            missing.push("risk_reference".into());
        }
        if !missing.is_empty() {
            dropped.push(KeyMismatch { state: s.to_string(), missing_from: missing });
        }
    }
    let mut kept: Vec<&crate::macroindex::EnvScoreRow> = scores
        .rows
        .iter()
        .filter(|r| !dropped.iter().any(|d| d.state == r.state))
        .collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.state.cmp(&b.state)));
    let cols: Vec<Option<&crate::ingest::StateIndicator>> =
        columns.iter().map(|c| indicators.indicator(&c.indicator)).collect();
    let risk: Vec<f64> = kept.iter().map(|r| reference.for_state(&r.state).unwrap()).collect();
    let env: Vec<f64> = kept.iter().map(|r| r.score).collect();
    let association = cross_scale_association(&risk, &env, method)?;
    let rows = kept
        .iter()
        .zip(&risk)
        .take(top_n)
        .map(|(r, &nhanes_risk)| {
            let si = indicators.states.iter().position(|s| *s == r.state);
            OverlayRow {
                state: r.state.clone(),
                env_rank: r.rank,
                nhanes_risk,
                env_score: r.score,
                cluster_label: clusters.get(&r.state).cloned(),
                indicators: cols.iter().map(|c| c.zip(si).and_then(|(c, i)| c.values[i])).collect(),
            }
        })
        .collect();
    Ok(AlignmentReport {
        reference: reference.clone(),
        columns: columns.to_vec(),
        rows,
        association,
        n_states: kept.len(),
        dropped_states: dropped,
    })
}

impl AlignmentReport {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["State".to_string(), "NHANES Risk".into(), "EnvScore".into()];
        h.extend(self.columns.iter().map(|c| c.label.clone()));
        h.push("Cluster".into());
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,env_rank,nhanes_risk,env_score");
        for c in &self.columns {
            write!(out, ",{}", c.indicator).unwrap();
        }
        out.push_str(",cluster_label\n");
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.state, r.env_rank, r.nhanes_risk, r.env_score).unwrap();
            for v in &r.indicators {
                out.push(',');
                if let Some(v) = v {
                    write!(out, "{v}").unwrap();
                }
            }
            writeln!(out, ",{}", r.cluster_label.as_deref().unwrap_or("")).unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
        for r in &self.rows {
            write!(out, "| {} | {:.3} | {:.3} |", r.state, r.nhanes_risk, r.env_score).unwrap();
            for v in &r.indicators {
                match v {
                    Some(v) => write!(out, " {v:.3} |").unwrap(),
                    None => out.push_str(" – |"),
                }
            }
            writeln!(out, " {} |", r.cluster_label.as_deref().unwrap_or("")).unwrap();
        }
        out.push('\n');
        match &self.reference {
            RiskReference::National { value } => writeln!(
                out,
                "NHANES risk is the national mean predicted probability ({value:.3}), identical for every state."
            )
            .unwrap(),
            RiskReference::StratifiedSynthetic { .. } => out.push_str(
                "NHANES risk is a synthetic state reference from demographic reweighting, not an observed state estimate.\n",
            ),
        }
        match self.association.statistic {
            Some(s) => writeln!(out, "Association with EnvScore ({:?}, n = {}): {s:.3}.", self.association.method, self.association.n)
                .unwrap(),
            None => writeln!(
                out,
                "Association with EnvScore ({:?}, n = {}): undefined (zero variance).",
                self.association.method, self.association.n
            )
            .unwrap(),
        }
        if !self.dropped_states.is_empty() {
            let names: Vec<&str> = self.dropped_states.iter().map(|d| d.state.as_str()).collect();
            writeln!(out, "States not present in every input: {}.", names.join(", ")).unwrap();
        }
        out
    }
}
