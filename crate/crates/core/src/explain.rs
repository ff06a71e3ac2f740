//! Exact interventional Shapley values by subset enumeration.
//!
//! Players are groups of feature columns (a one-hot block is one player).
//! The value of a coalition S is the mean prediction over background rows
//! with the columns of S taken from the explained row and all others from
//! the background row.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{FeatureLayout, FeatureMatrix, Predictor};

pub const DEFAULT_MAX_PLAYERS: usize = 12;
pub const DEFAULT_BACKGROUND_ROWS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("{d} players exceeds the exact-enumeration limit of {max}")]
    TooManyFeatures { d: usize, max: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("player definition does not cover columns 0..{0} exactly once")]
    BadPlayers(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub name: String,
    pub columns: Vec<usize>,
}

/// One player per column group of the layout.
pub fn players_from_layout(layout: &FeatureLayout) -> Vec<Player> {
    layout
        .groups()
        .into_iter()
        .map(|(name, columns)| Player { name, columns })
        .collect()
}

/// One player per column.
pub fn column_players(d: usize) -> Vec<Player> {
    (0..d).map(|j| Player { name: format!("x{j}"), columns: vec![j] }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Expected prediction over the background, v(empty set).
    pub base: f64,
    /// One value per player.
    pub phi: Vec<f64>,
    pub prediction: f64,
}

impl Attribution {
    pub fn additivity_gap(&self) -> f64 {
        (self.base + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}

/// Running mean; the mean of identical values is that value exactly.
fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, v) in values.enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

pub fn shapley_exact<M: Predictor + ?Sized>(
    model: &M,
    x: &[f64],
    background: &FeatureMatrix,
    players: &[Player],
    max_players: usize,
) -> Result<Attribution, ExplainError> {
    let d_cols = model.n_features();
    if x.len() != d_cols || background.d() != d_cols {
        return Err(ExplainError::DimensionMismatch {
            expected: d_cols,
            found: if x.len() != d_cols { x.len() } else { background.d() },
        });
    }
    let mut covered = vec![0u8; d_cols];
    for p in players {
        for &c in &p.columns {
            if c >= d_cols {
                return Err(ExplainError::BadPlayers(d_cols));
            }
            covered[c] += 1;
        }
    }
    if covered.iter().any(|&c| c != 1) {
        return Err(ExplainError::BadPlayers(d_cols));
    }
    let d = players.len();
    if d > max_players {
        return Err(ExplainError::TooManyFeatures { d, max: max_players });
    }
    if background.n() == 0 {
        return Err(ExplainError::EmptyBackground);
    }

    let value = |mask: usize| -> f64 {
        let mut z = vec![0.0; d_cols];
        running_mean(background.rows().map(|b| {
            z.copy_from_slice(b);
            for (i, p) in players.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for &c in &p.columns {
                        z[c] = x[c];
                    }
                }
            }
            model.predict_row(&z)
        }))
    };
    let v: Vec<f64> = (0..1usize << d).into_par_iter().map(value).collect();

    // weight(s) = s! (d - s - 1)! / d! = 1 / (d * C(d - 1, s))
    let mut weight = vec![0.0; d.max(1)];
    let mut binom = 1.0f64;
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (d as f64 * binom);
        binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
    }
    let phi = (0..d)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = 0.0;
            for mask in 0..1usize << d {
                if mask & bit == 0 {
                    acc += weight[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
                }
            }
            acc
        })
        .collect();
    Ok(Attribution {
        base: v[0],
        phi,
        prediction: model.predict_row(x),
    })
}

/// Up to `cap` rows sampled without replacement (all rows when n <= cap),
/// returned in ascending row order.
pub fn sample_background(x: &FeatureMatrix, cap: usize, seed: u64) -> FeatureMatrix {
    if x.n() <= cap {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, x.n(), cap).into_vec();
    idx.sort_unstable();
    x.select(&idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

/// Mean |phi| per player name across attributions. Players sharing a name
/// are summed within each row first. Sorted by importance, then name.
pub fn global_importance(attributions: &[Attribution], players: &[Player]) -> Vec<Importance> {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for p in players {
        totals.entry(&p.name).or_insert(0.0);
    }
    for a in attributions {
        let mut row: BTreeMap<&str, f64> = BTreeMap::new();
        for (p, phi) in players.iter().zip(&a.phi) {
            *row.entry(&p.name).or_insert(0.0) += phi;
        }
        for (name, v) in row {
            *totals.get_mut(name).unwrap() += v.abs();
        }
    }
    let n = attributions.len().max(1) as f64;
    let mut out: Vec<Importance> = totals
        .into_iter()
        .map(|(feature, t)| Importance { feature: feature.to_string(), mean_abs_phi: t / n })
        .collect();
    out.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.feature.cmp(&b.feature)));
    out
}

/// Long-format CSV: `row_id,feature,phi`.
pub fn attributions_csv(row_ids: &[String], attributions: &[Attribution], players: &[Player]) -> String {
    let mut out = String::from("row_id,feature,phi\n");
    for (id, a) in row_ids.iter().zip(attributions) {
        for (p, phi) in players.iter().zip(&a.phi) {
            writeln!(out, "{id},{},{phi}", p.name).unwrap();
        }
    }
    out
}
