use proptest::prelude::*;
use riskscope_core::growth::{
    age_months, bmi, label_obesity, lms_value, lms_zscore, normal_cdf, percentile, GrowthReference, LmsRow, Sex,
};

const PHI: [(f64, f64); 10] = [
    (-8.0, 6.2209605742717841235e-16),
    (-3.0, 0.0013498980316300945267),
    (-1.6448536269514722, 0.050000000000000053101),
    (-0.5, 0.30853753872598689636),
    (0.0, 0.5),
    (0.5, 0.69146246127401310364),
    (1.2815515655446004, 0.89999999999999998825),
    (1.6448536269514722, 0.9499999999999999469),
    (1.959963984540054, 0.97499999999999998623),
    (3.0, 0.99865010196836990547),
];

// Boys, 24.5 months, CDC 2000 BMI-for-age.
const CDC: LmsRow = LmsRow { sex: Sex::Male, age_months: 24.5, l: -2.01118107, m: 16.57502768, s: 0.080592465 };
const CDC_P95: f64 = 19.33801;

fn cdc_reference() -> GrowthReference {
    GrowthReference::from_rows(vec![
        CDC,
        LmsRow { age_months: 240.5, ..CDC },
        LmsRow { sex: Sex::Female, ..CDC },
        LmsRow { sex: Sex::Female, age_months: 240.5, ..CDC },
    ])
    .unwrap()
}

#[test]
fn normal_cdf_matches_high_precision_values() {
    for (z, p) in PHI {
        let got = normal_cdf(z);
        assert!((got - p).abs() < 1e-10, "Phi({z}) = {got:e}, want {p:e}");
        assert!(((got - p) / p).abs() < 1e-13, "relative error at {z}: {got:e} vs {p:e}");
    }
}

#[test]
fn tabulated_p95_sits_just_below_the_cut() {
    let z = lms_zscore(CDC_P95, &CDC).unwrap();
    assert!((z - 1.6448533487981647718).abs() < 1e-12, "z = {z}");
    let pct = percentile(z);
    assert!((pct - 94.999997131247390018).abs() < 1e-9, "percentile = {pct}");

    // The published P95 value is rounded to five decimals and lands about
    // 3e-6 percentile points under 95, outside the boundary tolerance.
    let reference = cdc_reference();
    assert_eq!(label_obesity(Sex::Male, 2.0, CDC_P95, &reference).unwrap().label, 0);
    assert_eq!(label_obesity(Sex::Male, 2.0, 19.33802, &reference).unwrap().label, 1);
}

#[test]
fn exact_p95_measurement_is_labelled_obese() {
    let reference = cdc_reference();
    let x = lms_value(1.6448536269514729, &CDC).unwrap();
    assert_eq!(label_obesity(Sex::Male, 2.0, x, &reference).unwrap().label, 1);
}

#[test]
fn children_at_97th_and_94th_percentiles() {
    let reference = cdc_reference();
    let at = |z: f64| lms_value(z, &CDC).unwrap();
    let p97 = label_obesity(Sex::Male, 2.0, at(1.880793608151251), &reference).unwrap();
    assert!((p97.percentile - 97.0).abs() < 1e-9);
    assert_eq!(p97.label, 1);
    let p94 = label_obesity(Sex::Male, 2.0, at(1.5547735945968535), &reference).unwrap();
    assert!((p94.percentile - 94.0).abs() < 1e-9);
    assert_eq!(p94.label, 0);
}

#[test]
fn age_rows_use_half_month_convention() {
    assert_eq!(age_months(2.0), 24.5);
    assert_eq!(age_months(10.99), 131.5);
    assert_eq!(age_months(19.0), 228.5);
}

#[test]
fn bmi_rejects_non_positive_inputs() {
    assert!((bmi(20.0, 100.0).unwrap() - 20.0).abs() < 1e-12);
    assert!(bmi(0.0, 100.0).is_err());
    assert!(bmi(20.0, -1.0).is_err());
    assert!(bmi(f64::NAN, 100.0).is_err());
}

#[test]
fn power_branch_approaches_log_branch_at_the_median() {
    let log_row = LmsRow { l: 0.0, ..CDC };
    for l in [1e-6, -1e-6, 1e-9, 1e-11] {
        let row = LmsRow { l, ..CDC };
        for x in [CDC.m * 0.999_999, CDC.m, CDC.m * 1.000_001] {
            let gap = (lms_zscore(x, &row).unwrap() - lms_zscore(x, &log_row).unwrap()).abs();
            assert!(gap <= 1e-8, "L={l} x={x} gap={gap:e}");
        }
    }
}

#[test]
fn branch_gap_follows_first_order_term() {
    // Away from the median the gap is L ln^2(x/M) / (2S) to first order in L.
    let log_row = LmsRow { l: 0.0, ..CDC };
    for l in [1e-4, -1e-4, 1e-6] {
        let row = LmsRow { l, ..CDC };
        for x in [12.0, 16.0, 22.0, 30.0] {
            let gap = lms_zscore(x, &row).unwrap() - lms_zscore(x, &log_row).unwrap();
            let lr = (x / CDC.m).ln();
            let first = l * lr * lr / (2.0 * CDC.s);
            assert!((gap - first).abs() <= 1e-3 * first.abs() + 1e-13, "L={l} x={x}: {gap:e} vs {first:e}");
        }
    }
}

fn arb_row() -> impl Strategy<Value = LmsRow> {
    (-3.0f64..2.0, 12.0f64..25.0, 0.05f64..0.2).prop_map(|(l, m, s)| LmsRow { sex: Sex::Female, age_months: 60.5, l, m, s })
}

proptest! {
    #[test]
    fn percentile_strictly_increases_with_bmi(row in arb_row(), a in 8.0f64..45.0, d in 0.01f64..5.0) {
        let za = lms_zscore(a, &row).unwrap();
        let zb = lms_zscore(a + d, &row).unwrap();
        prop_assert!(zb > za);
        prop_assert!(percentile(zb) >= percentile(za));
        if (-8.0..8.0).contains(&za) && (-8.0..8.0).contains(&zb) {
            prop_assert!(percentile(zb) > percentile(za));
        }
    }

    #[test]
    fn lms_value_inverts_zscore(row in arb_row(), z in -3.0f64..3.0) {
        if let Ok(x) = lms_value(z, &row) {
            let back = lms_zscore(x, &row).unwrap();
            prop_assert!((back - z).abs() <= 1e-9, "{z} -> {x} -> {back}");
        }
    }

    #[test]
    fn label_is_monotone_in_bmi(a in 10.0f64..30.0, d in 0.0f64..10.0, years in 2.0f64..19.99) {
        let reference = cdc_reference();
        let la = label_obesity(Sex::Female, years, a, &reference).unwrap().label;
        let lb = label_obesity(Sex::Female, years, a + d, &reference).unwrap().label;
        prop_assert!(lb >= la);
    }
}
