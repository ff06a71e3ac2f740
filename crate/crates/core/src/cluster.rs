//! K-means over state feature vectors: k-means++ seeding, Lloyd iterations,
//! best of several seeded restarts, and the Low/Moderate/High vulnerability
//! naming of a three-cluster solution.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::macroindex::{EnvScoreTable, NormalizedTable};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k = {k} exceeds the {distinct} distinct points")]
    KExceedsDistinctPoints { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("points must have the same dimension d >= 1")]
    BadDimension,
    #[error("feature {0:?} is not among the normalised indicators")]
    UnknownFeature(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 3,
            seed: 0,
            restarts: 10,
            tol: 1e-8,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after each assignment step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub best_restart: usize,
    pub seed: u64,
    pub restarts: Vec<RestartSummary>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point; ties go to the lower cluster id.
pub fn assign_nearest(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

pub fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &j)| sq_dist(p, &centroids[j]))
        .sum()
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &j) in points.iter().zip(assignments) {
        counts[j] += 1;
        for (s, v) in sums[j].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    sums
}

/// Give every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &j in assignments.iter() {
            counts[j] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let j = assignments[i];
            if counts[j] > 1 {
                let d = sq_dist(p, &centroids[j]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        match far {
            Some(i) => assignments[i] = empty,
            None => return,
        }
    }
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = points[pick.expect("k <= distinct points leaves positive mass")].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    summary: RestartSummary,
}

fn lloyd(points: &[Vec<f64>], params: &KMeansParams, restart: usize) -> Run {
    let k = params.k;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(restart as u64);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignments = assign_nearest(points, &centroids);
    let mut trace = vec![inertia(points, &centroids, &assignments)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        repair_empty(points, &centroids, &mut assignments, k);
        let updated = means(points, &assignments, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        let next = assign_nearest(points, &updated);
        let cost = inertia(points, &updated, &next);
        let prev = *trace.last().unwrap();
        assert!(
            cost <= prev + 1e-9 * (1.0 + prev),
            "Lloyd inertia increased from {prev} to {cost} (restart {restart}, iteration {iterations})"
        );
        trace.push(cost);
        centroids = updated;
        let stable = next == assignments;
        assignments = next;
        if stable && shift < params.tol {
            converged = true;
            break;
        }
    }
    let final_inertia = inertia(points, &centroids, &assignments);
    Run {
        assignments,
        centroids,
        summary: RestartSummary {
            restart,
            inertia: final_inertia,
            iterations,
            converged,
            trace,
        },
    }
}

pub fn kmeans(points: &[Vec<f64>], params: &KMeansParams) -> Result<ClusterResult, ClusterError> {
    if params.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let d = points.first().map_or(0, Vec::len);
    if d == 0 || points.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
        return Err(ClusterError::BadDimension);
    }
    let distinct: HashSet<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    if params.k > distinct.len() {
        return Err(ClusterError::KExceedsDistinctPoints { k: params.k, distinct: distinct.len() });
    }
    let restarts = params.restarts.max(1);
    let runs: Vec<Run> = (0..restarts).into_par_iter().map(|r| lloyd(points, params, r)).collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].summary.inertia.total_cmp(&runs[b].summary.inertia).then(a.cmp(&b)))
        .unwrap();
    let summaries: Vec<RestartSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let win = runs.into_iter().nth(best).unwrap();
    Ok(ClusterResult {
        assignments: win.assignments,
        centroids: win.centroids,
        inertia: win.summary.inertia,
        iterations: win.summary.iterations,
        restarts_used: restarts,
        best_restart: best,
        seed: params.seed,
        restarts: summaries,
    })
}

/// States with a value for every requested feature, and their aligned Z
/// vectors. States missing any feature are returned separately.
pub fn feature_points(
    norm: &NormalizedTable,
    features: &[String],
) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<String>), ClusterError> {
    let cols = features
        .iter()
        .map(|f| {
            norm.indicators
                .iter()
                .find(|i| &i.name == f)
                .ok_or_else(|| ClusterError::UnknownFeature(f.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (mut states, mut points, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    for (s, state) in norm.states.iter().enumerate() {
        let row: Option<Vec<f64>> = cols.iter().map(|c| c.z[s]).collect();
        match row {
            Some(r) => {
                states.push(state.clone());
                points.push(r);
            }
            None => dropped.push(state.clone()),
        }
    }
    Ok((states, points, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VulnerabilityLabel {
    Low,
    Moderate,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub cluster: usize,
    pub size: usize,
    pub mean_envscore: Option<f64>,
    /// 1 = lowest mean EnvScore.
    pub order: usize,
    /// Named only for k = 3.
    pub label: Option<VulnerabilityLabel>,
    /// Mean tied with another cluster; order fell back to cluster id.
    pub tied: bool,
}

/// Order clusters by mean member EnvScore ascending (ties by cluster id).
/// With three clusters the order maps to Low, Moderate, High.
pub fn label_clusters(states: &[String], result: &ClusterResult, scores: &EnvScoreTable) -> Vec<ClusterLabel> {
    let k = result.centroids.len();
    let mut sums = vec![(0.0, 0usize, 0usize); k];
    for (state, &c) in states.iter().zip(&result.assignments) {
        sums[c].2 += 1;
        if let Some(r) = scores.get(state) {
            sums[c].0 += r.score;
            sums[c].1 += 1;
        }
    }
    let means: Vec<Option<f64>> = sums.iter().map(|&(s, n, _)| (n > 0).then(|| s / n as f64)).collect();
    let mut ids: Vec<usize> = (0..k).collect();
    let key = |c: usize| means[c].unwrap_or(f64::NEG_INFINITY);
    ids.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let names = [VulnerabilityLabel::Low, VulnerabilityLabel::Moderate, VulnerabilityLabel::High];
    let mut out: Vec<ClusterLabel> = ids
        .iter()
        .enumerate()
        .map(|(pos, &c)| ClusterLabel {
            cluster: c,
            size: sums[c].2,
            mean_envscore: means[c],
            order: pos + 1,
            label: (k == 3).then(|| names[pos]),
            tied: (0..k).any(|o| o != c && means[o] == means[c]),
        })
        .collect();
    out.sort_by_key(|l| l.cluster);
    out
}

/// `state,cluster,label` rows in state order.
pub fn clusters_csv(states: &[String], result: &ClusterResult, labels: &[ClusterLabel]) -> String {
    let mut rows: Vec<(&String, usize)> = states.iter().zip(result.assignments.iter().copied()).collect();
    rows.sort();
    let mut out = String::from("state,cluster,label\n");
    for (s, c) in rows {
        let label = labels[c].label.map_or_else(|| format!("cluster_{}", labels[c].order), |l| format!("{l:?}"));
        writeln!(out, "{s},{c},{label}").unwrap();
    }
    out
}
