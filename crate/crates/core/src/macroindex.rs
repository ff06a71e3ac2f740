//! Min-max normalisation of state indicators, direction alignment, the
//! EnvScore composite and descriptive statistics.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Direction, StateIndicatorTable};

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("no indicator survived normalisation")]
    NoIndicators,
    #[error("column {0:?} has no finite values")]
    EmptyColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Fewer than two distinct finite values.
    ConstantIndicator,
    AllMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub name: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedIndicator {
    pub name: String,
    pub unit: String,
    pub direction: Direction,
    pub min: f64,
    pub max: f64,
    /// Aligned Z per state: higher is more vulnerable.
    pub z: Vec<Option<f64>>,
}

impl NormalizedIndicator {
    /// Re-apply the recorded transform to a raw value.
    pub fn transform(&self, x: f64) -> f64 {
        let z = (x - self.min) / (self.max - self.min);
        match self.direction {
            Direction::VulnerabilityIncreasing => z,
            Direction::VulnerabilityDecreasing => 1.0 - z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTable {
    pub states: Vec<String>,
    pub indicators: Vec<NormalizedIndicator>,
    pub excluded: Vec<Excluded>,
}

/// `Z = (x - min) / (max - min)` per indicator over states, then
/// `Z <- 1 - Z` for vulnerability-decreasing indicators. Indicators without
/// two distinct finite values are excluded and listed.
pub fn minmax_normalize(table: &StateIndicatorTable) -> NormalizedTable {
    let mut indicators = Vec::new();
    let mut excluded = Vec::new();
    for ind in &table.indicators {
        let finite: Vec<f64> = ind.values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            warn!("indicator {} has no values; excluded", ind.name);
            excluded.push(Excluded { name: ind.name.clone(), reason: ExclusionReason::AllMissing });
            continue;
        }
        let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            warn!("indicator {} is constant across states; excluded", ind.name);
            excluded.push(Excluded { name: ind.name.clone(), reason: ExclusionReason::ConstantIndicator });
            continue;
        }
        let mut out = NormalizedIndicator {
            name: ind.name.clone(),
            unit: ind.unit.clone(),
            direction: ind.direction,
            min,
            max,
            z: Vec::new(),
        };
        out.z = ind
            .values
            .iter()
            .map(|v| v.filter(|x| x.is_finite()).map(|x| out.transform(x)))
            .collect();
        indicators.push(out);
    }
    NormalizedTable {
        states: table.states.clone(),
        indicators,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvScoreRow {
    pub state: String,
    pub score: f64,
    /// 1 = most vulnerable.
    pub rank: usize,
    pub n_used: usize,
    /// n_used / number of included indicators.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvScoreTable {
    /// Sorted by rank.
    pub rows: Vec<EnvScoreRow>,
    pub n_indicators: usize,
    /// States with no observed indicator at all.
    pub unscored: Vec<String>,
}

/// Unweighted mean of each state's aligned Z values over the indicators it
/// has; ranked by score descending, ties by state code.
pub fn envscore(norm: &NormalizedTable) -> Result<EnvScoreTable, IndexError> {
    let k = norm.indicators.len();
    if k == 0 {
        return Err(IndexError::NoIndicators);
    }
    let mut rows = Vec::with_capacity(norm.states.len());
    let mut unscored = Vec::new();
    for (s, state) in norm.states.iter().enumerate() {
        let present: Vec<f64> = norm.indicators.iter().filter_map(|i| i.z[s]).collect();
        if present.is_empty() {
            warn!("state {state} has no indicator values; left unscored");
            unscored.push(state.clone());
            continue;
        }
        rows.push(EnvScoreRow {
            state: state.clone(),
            score: present.iter().sum::<f64>() / present.len() as f64,
            rank: 0,
            n_used: present.len(),
            coverage: present.len() as f64 / k as f64,
        });
    }
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.state.cmp(&b.state)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(EnvScoreTable { rows, n_indicators: k, unscored })
}

impl EnvScoreTable {
    pub fn get(&self, state: &str) -> Option<&EnvScoreRow> {
        self.rows.iter().find(|r| r.state == state)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,score,rank,coverage\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", csv_text(&r.state), r.score, r.rank, r.coverage).unwrap();
        }
        out
    }
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdConvention {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub variable: String,
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub std_convention: StdConvention,
    pub rows: Vec<DescriptiveRow>,
}

/// Min, max, mean and standard deviation of the finite values of each
/// column.
pub fn descriptive_stats(
    columns: &[(String, Vec<f64>)],
    convention: StdConvention,
) -> Result<DescriptiveStats, IndexError> {
    let mut rows = Vec::with_capacity(columns.len());
    for (name, values) in columns {
        let xs: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if xs.is_empty() {
            return Err(IndexError::EmptyColumn(name.clone()));
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let denom = match convention {
            StdConvention::Population => n as f64,
            StdConvention::Sample => (n.max(2) - 1) as f64,
        };
        rows.push(DescriptiveRow {
            variable: name.clone(),
            n,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: (ss / denom).sqrt(),
        });
    }
    Ok(DescriptiveStats { std_convention: convention, rows })
}

impl DescriptiveStats {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Variable | Min | Max | Mean | Std |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            writeln!(out, "| {} | {:.3} | {:.3} | {:.3} | {:.3} |", r.variable, r.min, r.max, r.mean, r.std).unwrap();
        }
        let conv = match self.std_convention {
            StdConvention::Population => "population (N)",
            StdConvention::Sample => "sample (N - 1)",
        };
        writeln!(out, "\nStd convention: {conv}.").unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::StateIndicator;

    fn table(cols: &[(&str, Direction, Vec<Option<f64>>)]) -> StateIndicatorTable {
        let n = cols[0].2.len();
        StateIndicatorTable {
            states: (0..n).map(|i| format!("S{i}")).collect(),
            indicators: cols
                .iter()
                .map(|(name, dir, v)| StateIndicator {
                    name: name.to_string(),
                    unit: "u".into(),
                    direction: *dir,
                    values: v.clone(),
                    coverage: 1.0,
                })
                .collect(),
        }
    }

    use Direction::{VulnerabilityDecreasing as Dec, VulnerabilityIncreasing as Inc};

    #[test]
    fn linear_map_and_flip() {
        let t = table(&[
            ("P", Inc, vec![Some(10.0), Some(15.0), Some(20.0)]),
            ("Income", Dec, vec![Some(40.0), Some(90.0), Some(65.0)]),
        ]);
        let n = minmax_normalize(&t);
        assert_eq!(n.indicators[0].z, vec![Some(0.0), Some(0.5), Some(1.0)]);
        assert_eq!(n.indicators[1].z, vec![Some(1.0), Some(0.0), Some(0.5)]);
    }

    #[test]
    fn constant_and_empty_are_excluded() {
        let t = table(&[
            ("C", Inc, vec![Some(3.0), Some(3.0)]),
            ("E", Inc, vec![None, None]),
            ("P", Inc, vec![Some(1.0), Some(2.0)]),
        ]);
        let n = minmax_normalize(&t);
        assert_eq!(n.indicators.len(), 1);
        assert_eq!(
            n.excluded,
            vec![
                Excluded { name: "C".into(), reason: ExclusionReason::ConstantIndicator },
                Excluded { name: "E".into(), reason: ExclusionReason::AllMissing },
            ]
        );
    }

    #[test]
    fn envscore_means_and_ranks() {
        let t = table(&[
            ("A", Inc, vec![Some(0.0), Some(1.0), Some(0.2), None]),
            ("B", Inc, vec![Some(0.0), Some(1.0), Some(0.8), Some(0.5)]),
        ]);
        let e = envscore(&minmax_normalize(&t)).unwrap();
        assert_eq!(e.get("S0").unwrap().score, 0.0);
        assert_eq!(e.get("S2").unwrap().score, 0.5);
        assert_eq!(e.get("S3").unwrap().coverage, 0.5);
        let order: Vec<&str> = e.rows.iter().map(|r| r.state.as_str()).collect();
        assert_eq!(order, ["S1", "S2", "S3", "S0"]);
        assert_eq!(e.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
    }

    #[test]
    fn envscore_needs_an_indicator() {
        let t = table(&[("C", Inc, vec![Some(3.0), Some(3.0)])]);
        assert_eq!(envscore(&minmax_normalize(&t)), Err(IndexError::NoIndicators));
    }

    #[test]
    fn descriptive_examples() {
        let s = descriptive_stats(
            &[("c".into(), vec![2.0, 2.0, 2.0]), ("u".into(), vec![0.0, 1.0])],
            StdConvention::Population,
        )
        .unwrap();
        assert_eq!(s.rows[0].std, 0.0);
        assert_eq!((s.rows[1].mean, s.rows[1].std), (0.5, 0.5));
        assert_eq!(
            descriptive_stats(&[("e".into(), vec![f64::NAN])], StdConvention::Population),
            Err(IndexError::EmptyColumn("e".into()))
        );
    }
}
