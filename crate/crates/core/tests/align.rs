use std::collections::BTreeMap;

use proptest::prelude::*;
use riskscope_core::align::{
    cross_scale_association, national_mean_risk, overlay_table, stratified_reference, AlignError, CorrelationMethod,
    OverlayColumn, RiskReference,
};
use riskscope_core::ingest::{Direction, StateIndicator, StateIndicatorTable};
use riskscope_core::macroindex::{EnvScoreRow, EnvScoreTable};

fn scores(pairs: &[(&str, f64)]) -> EnvScoreTable {
    let mut rows: Vec<EnvScoreRow> = pairs
        .iter()
        .map(|(s, v)| EnvScoreRow { state: s.to_string(), score: *v, rank: 0, n_used: 1, coverage: 1.0 })
        .collect();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.state.cmp(&b.state)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    EnvScoreTable { rows, n_indicators: 1, unscored: vec![] }
}

fn indicators(states: &[&str], values: &[f64]) -> StateIndicatorTable {
    StateIndicatorTable {
        states: states.iter().map(|s| s.to_string()).collect(),
        indicators: vec![StateIndicator {
            name: "PovertyRate".into(),
            unit: "percent".into(),
            direction: Direction::VulnerabilityIncreasing,
            values: values.iter().map(|&v| Some(v)).collect(),
            coverage: 1.0,
        }],
    }
}

fn columns() -> Vec<OverlayColumn> {
    vec![OverlayColumn { label: "Poverty".into(), indicator: "PovertyRate".into() }]
}

fn clusters(states: &[&str]) -> BTreeMap<String, String> {
    states.iter().map(|s| (s.to_string(), "High".to_string())).collect()
}

#[test]
fn national_mean_examples() {
    assert_eq!(national_mean_risk(&[0.5; 4]).unwrap(), 0.5);
    assert!((national_mean_risk(&[0.1, 0.3, 0.5]).unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(national_mean_risk(&[]), Err(AlignError::EmptyPredictions));
}

#[test]
fn correlation_signs_and_zero_variance() {
    let a = [1.0, 2.0, 4.0, 8.0];
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    for m in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
        assert_eq!(cross_scale_association(&a, &a, m).unwrap().statistic, Some(1.0));
        assert_eq!(cross_scale_association(&a, &neg, m).unwrap().statistic, Some(-1.0));
        let flat = cross_scale_association(&[0.3; 4], &a, m).unwrap();
        assert!(!flat.defined && flat.statistic.is_none());
    }
    assert!(cross_scale_association(&a, &a[..3], CorrelationMethod::Pearson).is_err());
}

#[test]
fn broadcast_reference_leaves_association_undefined() {
    let states = ["AL", "MS", "OH"];
    let report = overlay_table(
        &scores(&[("AL", 0.5), ("MS", 0.6), ("OH", 0.2)]),
        &clusters(&states),
        &indicators(&states, &[16.0, 19.0, 13.0]),
        &RiskReference::National { value: 0.31 },
        &columns(),
        10,
        CorrelationMethod::Pearson,
    )
    .unwrap();
    assert!(!report.association.defined);
    assert!(report.rows.iter().all(|r| r.nhanes_risk == 0.31));
    assert_eq!(report.rows.iter().map(|r| r.state.as_str()).collect::<Vec<_>>(), ["MS", "AL", "OH"]);
    assert_eq!(report.rows[0].indicators, vec![Some(19.0)]);
    assert!(report.to_markdown().contains("undefined"));
}

#[test]
fn mismatched_states_are_dropped_and_listed() {
    let report = overlay_table(
        &scores(&[("AL", 0.5), ("MS", 0.6), ("PR", 0.9)]),
        &clusters(&["AL", "MS", "PR"]),
        &indicators(&["AL", "MS", "WY"], &[16.0, 19.0, 9.0]),
        &RiskReference::National { value: 0.31 },
        &columns(),
        10,
        CorrelationMethod::Pearson,
    )
    .unwrap();
    assert_eq!(report.n_states, 2);
    let dropped: Vec<(&str, &[String])> =
        report.dropped_states.iter().map(|d| (d.state.as_str(), d.missing_from.as_slice())).collect();
    assert_eq!(dropped, [("PR", &["indicators".to_string()][..]), ("WY", &["envscore".into(), "clusters".into()][..])]);
}

#[test]
fn top_zero_gives_an_empty_shell() {
    let states = ["AL", "MS"];
    let report = overlay_table(
        &scores(&[("AL", 0.5), ("MS", 0.6)]),
        &clusters(&states),
        &indicators(&states, &[1.0, 2.0]),
        &RiskReference::National { value: 0.3 },
        &columns(),
        0,
        CorrelationMethod::Spearman,
    )
    .unwrap();
    assert!(report.rows.is_empty());
    assert_eq!(report.to_csv().lines().count(), 1);
}

#[test]
fn stratified_reference_mixes_stratum_means() {
    let preds = [0.2, 0.4, 0.6, 0.8];
    let strata: Vec<String> = ["a", "a", "b", "b"].map(String::from).to_vec();
    let mut margins = BTreeMap::new();
    margins.insert("X".to_string(), BTreeMap::from([("a".to_string(), 3.0), ("b".to_string(), 1.0)]));
    margins.insert("Y".to_string(), BTreeMap::from([("b".to_string(), 1.0)]));
    let r = stratified_reference(&preds, &strata, &margins).unwrap();
    assert!((r["X"] - (0.75 * 0.3 + 0.25 * 0.7)).abs() < 1e-15);
    assert!((r["Y"] - 0.7).abs() < 1e-15);
    margins.insert("Z".to_string(), BTreeMap::from([("c".to_string(), 1.0)]));
    assert!(matches!(stratified_reference(&preds, &strata, &margins), Err(AlignError::UnknownStratum { .. })));
}

proptest! {
    #[test]
    fn input_order_does_not_change_the_report(
        values in prop::collection::vec((0u8..20, 0.0f64..30.0), 2..12),
        order in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(),
        top_n in 0usize..12,
    ) {
        let names: Vec<String> = (0..values.len()).map(|i| format!("S{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let pairs: Vec<(&str, f64)> = refs.iter().zip(&values).map(|(s, (v, _))| (*s, f64::from(*v) / 20.0)).collect();
        let raw: Vec<f64> = values.iter().map(|(_, r)| *r).collect();
        let reference = RiskReference::StratifiedSynthetic {
            values: names.iter().zip(&raw).map(|(s, r)| (s.clone(), r / 100.0)).collect(),
        };
        let base = overlay_table(
            &scores(&pairs), &clusters(&refs), &indicators(&refs, &raw), &reference, &columns(), top_n,
            CorrelationMethod::Spearman,
        ).unwrap();

        let perm: Vec<usize> = order.into_iter().filter(|&i| i < values.len()).collect();
        let mut shuffled_scores = scores(&pairs);
        shuffled_scores.rows = perm.iter().map(|&i| shuffled_scores.rows[i].clone()).collect();
        let shuffled_states: Vec<&str> = perm.iter().map(|&i| refs[i]).collect();
        let shuffled_raw: Vec<f64> = perm.iter().map(|&i| raw[i]).collect();
        let permuted = overlay_table(
            &shuffled_scores, &clusters(&shuffled_states), &indicators(&shuffled_states, &shuffled_raw), &reference,
            &columns(), top_n, CorrelationMethod::Spearman,
        ).unwrap();
        prop_assert_eq!(&base.rows, &permuted.rows);
        prop_assert_eq!(base.association.statistic.map(f64::to_bits), permuted.association.statistic.map(f64::to_bits));
        for w in base.rows.windows(2) {
            prop_assert!(w[0].env_score > w[1].env_score || (w[0].env_score == w[1].env_score && w[0].state < w[1].state));
        }
    }
}
