use proptest::prelude::*;
use riskscope_core::cluster::{assign_nearest, inertia, kmeans, label_clusters, ClusterResult, KMeansParams, VulnerabilityLabel};
use riskscope_core::macroindex::{EnvScoreRow, EnvScoreTable};

fn params(k: usize, seed: u64) -> KMeansParams {
    KMeansParams { k, seed, ..KMeansParams::default() }
}

/// Minimum inertia over every partition of three points into two clusters.
fn enumerated_min(pts: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for alone in 0..3 {
        let pair: Vec<&Vec<f64>> = (0..3).filter(|&i| i != alone).map(|i| &pts[i]).collect();
        let d2: f64 = pair[0].iter().zip(pair[1]).map(|(a, b)| (a - b) * (a - b)).sum();
        best = best.min(d2 / 2.0);
    }
    best
}

#[test]
fn three_point_instance_reaches_enumerated_minimum() {
    let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 1.0]];
    let r = kmeans(&pts, &params(2, 1)).unwrap();
    assert_eq!(r.inertia, 0.5);
    assert_eq!(r.assignments[0], r.assignments[1]);
    assert_ne!(r.assignments[0], r.assignments[2]);
}

fn grid_points(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((-10i32..=10).prop_map(f64::from), 2), n)
}

fn scores_for(states: &[String], values: &[f64]) -> EnvScoreTable {
    let mut rows: Vec<EnvScoreRow> = states
        .iter()
        .zip(values)
        .map(|(s, &v)| EnvScoreRow { state: s.clone(), score: v, rank: 0, n_used: 1, coverage: 1.0 })
        .collect();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.state.cmp(&b.state)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    EnvScoreTable { rows, n_indicators: 1, unscored: vec![] }
}

proptest! {
    #[test]
    fn three_points_two_clusters_match_enumeration(pts in grid_points(3), seed in any::<u64>()) {
        let distinct = pts[0] != pts[1] && pts[0] != pts[2] && pts[1] != pts[2];
        prop_assume!(distinct);
        let r = kmeans(&pts, &params(2, seed)).unwrap();
        prop_assert!((r.inertia - enumerated_min(&pts)).abs() < 1e-12, "{} vs {}", r.inertia, enumerated_min(&pts));
    }

    #[test]
    fn solution_is_a_fixed_point_and_best_of_restarts(pts in grid_points(25), k in 1usize..5, seed in any::<u64>()) {
        let distinct: std::collections::HashSet<Vec<u64>> =
            pts.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
        prop_assume!(distinct.len() >= k);
        let r = kmeans(&pts, &params(k, seed)).unwrap();
        prop_assert_eq!(&assign_nearest(&pts, &r.centroids), &r.assignments);
        prop_assert!((inertia(&pts, &r.centroids, &r.assignments) - r.inertia).abs() < 1e-9);
        for s in &r.restarts {
            prop_assert!(r.inertia <= s.inertia);
            for w in s.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
            }
        }
        prop_assert_eq!(&r, &kmeans(&pts, &params(k, seed)).unwrap());
    }

    #[test]
    fn labels_do_not_depend_on_cluster_ids(
        pts in grid_points(20),
        values in prop::collection::vec(0.0f64..1.0, 20),
        seed in any::<u64>(),
        perm in Just([2usize, 0, 1]).prop_shuffle(),
    ) {
        let distinct: std::collections::HashSet<Vec<u64>> =
            pts.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
        prop_assume!(distinct.len() >= 3);
        let states: Vec<String> = (0..20).map(|i| format!("S{i:02}")).collect();
        let scores = scores_for(&states, &values);
        let r = kmeans(&pts, &params(3, seed)).unwrap();
        let mut permuted = ClusterResult {
            assignments: r.assignments.iter().map(|&c| perm[c]).collect(),
            centroids: vec![vec![]; 3],
            ..r.clone()
        };
        for (c, centroid) in r.centroids.iter().enumerate() {
            permuted.centroids[perm[c]] = centroid.clone();
        }
        let a = label_clusters(&states, &r, &scores);
        let b = label_clusters(&states, &permuted, &scores);
        for (i, (&ca, &cb)) in r.assignments.iter().zip(&permuted.assignments).enumerate() {
            let (la, lb) = (&a[ca], &b[cb]);
            // a tie falls back to cluster id, the only id-dependent choice
            if !la.tied {
                prop_assert_eq!(la.label, lb.label, "state {}", i);
                prop_assert_eq!(la.order, lb.order);
            }
        }
    }
}

#[test]
fn labels_follow_mean_scores() {
    let states: Vec<String> = ["A", "B", "C", "D"].map(String::from).to_vec();
    let scores = scores_for(&states, &[0.6, 0.2, 0.4, 0.6]);
    let r = ClusterResult {
        assignments: vec![0, 1, 2, 0],
        centroids: vec![vec![0.0]; 3],
        inertia: 0.0,
        iterations: 1,
        restarts_used: 1,
        best_restart: 0,
        seed: 0,
        restarts: vec![],
    };
    let labels = label_clusters(&states, &r, &scores);
    let by_cluster: Vec<_> = labels.iter().map(|l| l.label.unwrap()).collect();
    assert_eq!(by_cluster, [VulnerabilityLabel::High, VulnerabilityLabel::Low, VulnerabilityLabel::Moderate]);
}

#[test]
fn tied_means_break_by_cluster_id_and_are_flagged() {
    let states: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
    let scores = scores_for(&states, &[0.5, 0.5, 0.9]);
    let r = ClusterResult {
        assignments: vec![1, 0, 2],
        centroids: vec![vec![0.0]; 3],
        inertia: 0.0,
        iterations: 1,
        restarts_used: 1,
        best_restart: 0,
        seed: 0,
        restarts: vec![],
    };
    let labels = label_clusters(&states, &r, &scores);
    assert_eq!((labels[0].order, labels[1].order, labels[2].order), (1, 2, 3));
    assert!(labels[0].tied && labels[1].tied && !labels[2].tied);
}
