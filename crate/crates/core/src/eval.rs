//! Train/test splitting and classification metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 10 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("labels contain a single class")]
    SingleClassInput,
    #[error("no values to summarise")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// Ascending row indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

/// Seeded 70/30 split with `|train| = floor(0.7 n)`.
///
/// Stratified mode allocates the training rows to classes by largest
/// remainder (ties to the lower label), shuffles each class with the same
/// generator, class 0 first, and takes the leading rows of each.
pub fn split_70_30(n: usize, labels: &[u8], seed: u64, stratified: bool) -> Result<SplitIndices, EvalError> {
    if n < 10 {
        return Err(EvalError::TooFewRows(n));
    }
    if labels.len() != n {
        return Err(EvalError::LengthMismatch(n, labels.len()));
    }
    let n_train = (n * 7) / 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    if stratified {
        let mut classes: Vec<(u8, Vec<usize>)> = Vec::new();
        for (i, &c) in labels.iter().enumerate() {
            match classes.iter_mut().find(|(k, _)| *k == c) {
                Some((_, v)) => v.push(i),
                None => classes.push((c, vec![i])),
            }
        }
        classes.sort_by_key(|(k, _)| *k);
        let mut quota: Vec<usize> = classes.iter().map(|(_, v)| v.len() * n_train / n).collect();
        let mut left = n_train - quota.iter().sum::<usize>();
        let mut by_remainder: Vec<usize> = (0..classes.len()).collect();
        by_remainder.sort_by_key(|&c| std::cmp::Reverse((classes[c].1.len() * n_train) % n));
        for &c in by_remainder.iter().cycle() {
            if left == 0 {
                break;
            }
            if quota[c] < classes[c].1.len() {
                quota[c] += 1;
                left -= 1;
            }
        }
        for ((_, mut members), q) in classes.into_iter().zip(quota) {
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..q]);
            test.extend_from_slice(&members[q..]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        train.extend_from_slice(&all[..n_train]);
        test.extend_from_slice(&all[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed, stratified })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// Confusion counts with probabilities at or above `threshold` called
/// positive.
pub fn confusion(probs: &[f64], y: &[u8], threshold: f64) -> Result<ConfusionCounts, EvalError> {
    if probs.len() != y.len() {
        return Err(EvalError::LengthMismatch(probs.len(), y.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in probs.iter().zip(y) {
        match (p >= threshold, t == 1) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(probs: &[f64], y: &[u8], threshold: f64) -> Result<(f64, ConfusionCounts), EvalError> {
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = confusion(probs, y, threshold)?;
    Ok((c.accuracy(), c))
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// U / (n_pos * n_neg), tied scores sharing their average rank.
pub fn roc_auc(scores: &[f64], y: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != y.len() {
        return Err(EvalError::LengthMismatch(scores.len(), y.len()));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassInput);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are kept doubled so tie averages stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| y[k] == 1).count() as u128;
        rank_sum2 += avg2 * pos_in_group;
        i = j;
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok((u2 as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub accuracy: f64,
    pub auc: f64,
    pub confusion: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub model: String,
    pub seeds: Vec<u64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split_seed: u64,
    pub stratified: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub threshold: f64,
    pub models: Vec<ModelMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multi_seed: Vec<SeedSummary>,
}

impl MetricsReport {
    /// Markdown table with one row per model: accuracy and AUC.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Model | Accuracy | AUC |\n|---|---|---|\n");
        for m in &self.models {
            writeln!(out, "| {} | {:.3} | {:.3} |", m.model, m.accuracy, m.auc).unwrap();
        }
        if !self.multi_seed.is_empty() {
            out.push_str("\n| Model | Seeds | Accuracy (mean ± sd) | AUC (mean ± sd) |\n|---|---|---|---|\n");
            for s in &self.multi_seed {
                writeln!(
                    out,
                    "| {} | {} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
                    s.model,
                    s.seeds.len(),
                    s.accuracy_mean,
                    s.accuracy_std,
                    s.auc_mean,
                    s.auc_std
                )
                .unwrap();
            }
        }
        writeln!(
            out,
            "\nSplit seed {}, {} train / {} test rows, threshold {}.",
            self.split_seed, self.n_train, self.n_test, self.threshold
        )
        .unwrap();
        out
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> Result<(f64, f64), EvalError> {
    if xs.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
