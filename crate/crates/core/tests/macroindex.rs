use proptest::prelude::*;
use riskscope_core::ingest::{Direction, StateIndicator, StateIndicatorTable};
use riskscope_core::macroindex::{descriptive_stats, envscore, minmax_normalize, ExclusionReason, StdConvention};

fn table(cols: &[(Direction, Vec<Option<f64>>)]) -> StateIndicatorTable {
    let n = cols[0].1.len();
    StateIndicatorTable {
        states: (0..n).map(|i| format!("S{i:02}")).collect(),
        indicators: cols
            .iter()
            .enumerate()
            .map(|(j, (direction, values))| StateIndicator {
                name: format!("ind{j}"),
                unit: "u".into(),
                direction: *direction,
                values: values.clone(),
                coverage: 1.0,
            })
            .collect(),
    }
}

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::VulnerabilityIncreasing), Just(Direction::VulnerabilityDecreasing)]
}

/// Raw values on a 1/1024 grid so that dyadic affine maps are exact.
fn grid_value() -> impl Strategy<Value = f64> {
    (0i32..200_000).prop_map(|v| f64::from(v) / 1024.0)
}

fn random_table() -> impl Strategy<Value = Vec<(Direction, Vec<Option<f64>>)>> {
    (3usize..20, 1usize..6).prop_flat_map(|(n, k)| {
        prop::collection::vec((direction(), prop::collection::vec(prop::option::weighted(0.9, grid_value()), n)), k)
    })
}

#[test]
fn direction_flip_and_endpoints() {
    let t = table(&[
        (Direction::VulnerabilityIncreasing, vec![Some(10.0), Some(20.0), Some(15.0)]),
        (Direction::VulnerabilityDecreasing, vec![Some(10.0), Some(20.0), Some(15.0)]),
        (Direction::VulnerabilityIncreasing, vec![Some(3.0), Some(3.0), Some(3.0)]),
    ]);
    let norm = minmax_normalize(&t);
    assert_eq!(norm.indicators[0].z, vec![Some(0.0), Some(1.0), Some(0.5)]);
    assert_eq!(norm.indicators[1].z, vec![Some(1.0), Some(0.0), Some(0.5)]);
    assert_eq!(norm.excluded.len(), 1);
    assert_eq!(norm.excluded[0].reason, ExclusionReason::ConstantIndicator);
    let scores = envscore(&norm).unwrap();
    assert!(scores.rows.iter().all(|r| r.score == 0.5));
    // ties rank by state code
    assert_eq!(scores.rows.iter().map(|r| r.state.as_str()).collect::<Vec<_>>(), ["S00", "S01", "S02"]);
}

#[test]
fn descriptive_stats_use_population_std() {
    let t = table(&[(Direction::VulnerabilityIncreasing, vec![Some(0.0), Some(1.0)])]);
    let stats = descriptive_stats(
        &[("x".to_string(), t.indicators[0].values.iter().flatten().copied().collect::<Vec<_>>())],
        StdConvention::Population,
    )
    .unwrap();
    assert_eq!((stats.rows[0].mean, stats.rows[0].std), (0.5, 0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scores_lie_in_unit_interval_and_ranks_permute(cols in random_table()) {
        let norm = minmax_normalize(&table(&cols));
        for ind in &norm.indicators {
            prop_assert!(ind.z.iter().flatten().all(|z| (0.0..=1.0).contains(z)));
        }
        if let Ok(scores) = envscore(&norm) {
            prop_assert!(scores.rows.iter().all(|r| (0.0..=1.0).contains(&r.score)));
            let mut ranks: Vec<usize> = scores.rows.iter().map(|r| r.rank).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=scores.rows.len()).collect::<Vec<_>>());
            prop_assert_eq!(scores.rows.len() + scores.unscored.len(), norm.states.len());
        }
    }

    #[test]
    fn exact_affine_maps_leave_z_bit_identical(cols in random_table(), k in -6i32..7, b in -4096i32..4096) {
        let a = 2f64.powi(k);
        let b = f64::from(b) / 1024.0;
        let mapped: Vec<_> = cols
            .iter()
            .map(|(d, v)| (*d, v.iter().map(|x| x.map(|x| a * x + b)).collect()))
            .collect();
        let (p, q) = (minmax_normalize(&table(&cols)), minmax_normalize(&table(&mapped)));
        prop_assert_eq!(p.indicators.len(), q.indicators.len());
        for (x, y) in p.indicators.iter().zip(&q.indicators) {
            prop_assert_eq!(&x.z, &y.z);
        }
    }

    #[test]
    fn general_affine_maps_leave_z_unchanged_to_rounding(cols in random_table(), a in 1e-3f64..1e3, b in -1e4f64..1e4) {
        let mapped: Vec<_> = cols
            .iter()
            .map(|(d, v)| (*d, v.iter().map(|x| x.map(|x| a * x + b)).collect()))
            .collect();
        let (p, q) = (minmax_normalize(&table(&cols)), minmax_normalize(&table(&mapped)));
        for (x, y) in p.indicators.iter().zip(&q.indicators) {
            for (u, v) in x.z.iter().zip(&y.z) {
                match (u, v) {
                    (Some(u), Some(v)) => prop_assert!((u - v).abs() <= 1e-9, "{u} vs {v}"),
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }
    }

    #[test]
    fn raising_an_interior_value_never_lowers_the_score(
        cols in random_table(),
        which in any::<prop::sample::Index>(),
        bump in 0.0f64..1.0,
    ) {
        let mut cols = cols;
        let n = cols[0].1.len();
        let s = which.index(n);
        let (dir, values) = &mut cols[0];
        let observed: Vec<f64> = values.iter().enumerate().filter(|(i, _)| *i != s).filter_map(|(_, v)| *v).collect();
        let (Some(x), false) = (values[s], observed.is_empty()) else { return Ok(()); };
        let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi && x >= lo && x < hi) {
            return Ok(());
        }
        // increase vulnerability: up for increasing indicators, down for decreasing ones
        let target = match dir {
            Direction::VulnerabilityIncreasing => x + bump * (hi - x),
            Direction::VulnerabilityDecreasing => x - bump * (x - lo),
        };
        let before = envscore(&minmax_normalize(&table(&cols))).unwrap();
        cols[0].1[s] = Some(target);
        let after = envscore(&minmax_normalize(&table(&cols))).unwrap();
        let state = format!("S{s:02}");
        prop_assert!(after.get(&state).unwrap().score >= before.get(&state).unwrap().score);
    }
}
