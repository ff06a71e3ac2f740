use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use riskscope_core::growth::GrowthReference;
use riskscope_core::ingest::{
    aggregate_to_state, build_cohort, parse_xpt, AggregationMethod, CategoryLevel, Cell, Direction, DropReason,
    IndicatorSpec, MissingCode, RawTable, Recode, SchemaFile, VariableEntry, VariableRole, VariableSchema,
};

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read(rel: &str) -> Vec<u8> {
    std::fs::read(repo_root().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Parse `[-]0x1.<13 hex digits>p<exp>` as printed by Python's float.hex.
fn from_hex(s: &str) -> f64 {
    let (neg, body) = s.strip_prefix('-').map_or((false, s), |b| (true, b));
    let body = body.strip_prefix("0x").unwrap();
    let (mant, exp) = body.split_once('p').unwrap();
    let (lead, frac) = mant.split_once('.').unwrap();
    let exp: i64 = exp.parse().unwrap();
    let frac = u64::from_str_radix(frac, 16).unwrap();
    if lead == "0" {
        assert_eq!(frac, 0, "subnormals do not occur in the fixture");
        return if neg { -0.0 } else { 0.0 };
    }
    let bits = (u64::from(neg) << 63) | (((exp + 1023) as u64) << 52) | frac;
    f64::from_bits(bits)
}

#[test]
fn xport_values_match_independent_decoder_bit_for_bit() {
    let table = parse_xpt(&read("crates/core/tests/fixtures/xport/two_by_three.xpt")).unwrap();
    let reference: serde_json::Value =
        serde_json::from_slice(&read("crates/core/tests/fixtures/xport/two_by_three.reference.json")).unwrap();
    let names: Vec<String> = reference["columns"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(table.column_names(), names.as_slice());
    let rows = reference["rows"].as_array().unwrap();
    assert_eq!(table.n_rows(), rows.len());
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            let expected = from_hex(v.as_str().unwrap());
            let got = table.cell(i, j).as_f64().unwrap();
            assert_eq!(got.to_bits(), expected.to_bits(), "row {i} col {j}: {got:e} vs {expected:e}");
        }
    }
}

#[test]
fn xport_missing_sentinels_decode_to_codes() {
    let table = parse_xpt(&read("crates/core/tests/fixtures/xport/sentinels.xpt")).unwrap();
    let code = |c| Cell::Missing(MissingCode::new(c).unwrap());
    let expected = [code('.'), code('A'), code('Z'), code('_'), Cell::Numeric(0.0)];
    for (i, e) in expected.iter().enumerate() {
        assert_eq!(table.cell(i, 1), e, "row {i}");
        assert_eq!(table.cell(i, 0), &Cell::Numeric((i + 1) as f64));
    }
    assert_eq!(table.cell(0, 2), &Cell::Text("alpha".into()));
    assert_eq!(table.cell(2, 2), &Cell::Text("gam".into()));
}

#[test]
fn fixture_ingest_counts_match_construction() {
    let schema = SchemaFile::from_json(&read("fixtures/schema.json")).unwrap();
    let growth = GrowthReference::from_csv(&read("assets/lms_bmi_for_age_synthetic_v1.csv")).unwrap();
    let demo = parse_xpt(&read("fixtures/nhanes/DEMO_SYN.xpt")).unwrap();
    let bmx = parse_xpt(&read("fixtures/nhanes/BMX_SYN.xpt")).unwrap();
    let joined = demo.left_join(&bmx, "SEQN").unwrap();
    let build = build_cohort(&joined, &schema.variables, &growth).unwrap();

    let expected: serde_json::Value = serde_json::from_slice(&read("fixtures/expected_counts.json")).unwrap();
    let r = &build.report;
    assert_eq!(r.input_rows as u64, expected["input_rows"].as_u64().unwrap());
    assert_eq!(r.kept as u64, expected["kept"].as_u64().unwrap());
    for (reason, count) in expected["dropped"].as_object().unwrap() {
        let reason: DropReason = serde_json::from_value(serde_json::Value::String(reason.clone())).unwrap();
        assert_eq!(r.dropped[&reason] as u64, count.as_u64().unwrap(), "{reason:?}");
    }
    assert_eq!(r.kept + r.dropped_total(), r.input_rows);
    assert_eq!(build.cohort.len(), r.kept);
    assert!(build.cohort.records.iter().all(|c| (2.0..=19.0).contains(&c.age_years) && c.label <= 1));
}

fn flat_growth() -> GrowthReference {
    GrowthReference::from_csv(b"sex,agemos,L,M,S\n1,24,1,18,0.1\n1,240,1,18,0.1\n2,24,1,18,0.1\n2,240,1,18,0.1\n").unwrap()
}

fn small_schema(policy_impute: bool) -> VariableSchema {
    let num = |s: &str, role| VariableEntry { source: s.into(), role, recode: Recode::Numeric, missing_codes: vec![] };
    VariableSchema {
        entries: vec![
            num("SEQN", VariableRole::Id),
            num("RIDAGEYR", VariableRole::Predictor),
            VariableEntry {
                source: "RIAGENDR".into(),
                role: VariableRole::Predictor,
                recode: Recode::Category {
                    levels: vec![
                        CategoryLevel { code: 1.0, label: "male".into() },
                        CategoryLevel { code: 2.0, label: "female".into() },
                    ],
                },
                missing_codes: vec![],
            },
            VariableEntry {
                source: "INDFMPIR".into(),
                role: VariableRole::Predictor,
                recode: Recode::Numeric,
                missing_codes: vec![9.0],
            },
            num("BMXWT", VariableRole::WeightKg),
            num("BMXHT", VariableRole::HeightCm),
        ],
        missing_policy: if policy_impute {
            riskscope_core::ingest::MissingPolicy::MedianImpute
        } else {
            riskscope_core::ingest::MissingPolicy::Drop
        },
        label_mode: Default::default(),
    }
}

fn arb_cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        4 => (-5.0f64..200.0).prop_map(|v| Cell::Numeric((v * 10.0).round() / 10.0)),
        1 => Just(Cell::Missing(MissingCode::DOT)),
        1 => Just(Cell::Numeric(9.0)),
    ]
}

fn arb_table() -> impl Strategy<Value = RawTable> {
    prop::collection::vec(
        (0u32..25, prop_oneof![Just(1.0), Just(2.0), Just(3.0)], arb_cell(), arb_cell(), arb_cell()),
        0..40,
    )
    .prop_map(|rows| {
        let names = ["SEQN", "RIDAGEYR", "RIAGENDR", "INDFMPIR", "BMXWT", "BMXHT"].map(String::from).to_vec();
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, (age, sex, pir, wt, ht))| {
                vec![Cell::Numeric(i as f64), Cell::Numeric(f64::from(age)), Cell::Numeric(sex), pir, wt, ht]
            })
            .collect();
        RawTable::new(names, rows).unwrap()
    })
}

proptest! {
    #[test]
    fn cohort_size_plus_drops_equals_input(table in arb_table(), impute in any::<bool>()) {
        match build_cohort(&table, &small_schema(impute), &flat_growth()) {
            Ok(build) => {
                let r = &build.report;
                prop_assert_eq!(r.input_rows, table.n_rows());
                prop_assert_eq!(build.cohort.len() + r.dropped_total(), table.n_rows());
                prop_assert!(build.cohort.records.iter().all(|c| c.label <= 1));
            }
            Err(riskscope_core::ingest::CohortError::EmptyCohort) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn equal_weights_reduce_to_the_plain_mean(
        rows in prop::collection::vec((0usize..6, prop::option::of(-1e3f64..1e3)), 1..60),
        w in 0.1f64..100.0,
    ) {
        let names = ["State", "X", "W"].map(String::from).to_vec();
        let cells = rows
            .iter()
            .map(|(s, v)| vec![
                Cell::Text(format!("S{s}")),
                v.map_or(Cell::Missing(MissingCode::DOT), Cell::Numeric),
                Cell::Numeric(w),
            ])
            .collect();
        let table = RawTable::new(names, cells).unwrap();
        let spec = IndicatorSpec {
            name: "X".into(),
            source: "t".into(),
            column: "X".into(),
            unit: "u".into(),
            direction: Direction::VulnerabilityIncreasing,
        };
        let plain = aggregate_to_state(&table, "State", &AggregationMethod::Mean, std::slice::from_ref(&spec)).unwrap();
        let weighted = aggregate_to_state(&table, "State", &AggregationMethod::WeightedMean("W".into()), &[spec]).unwrap();
        prop_assert_eq!(&plain.states, &weighted.states);
        for (a, b) in plain.indicators[0].values.iter().zip(&weighted.indicators[0].values) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}"),
                (None, None) => {}
                _ => prop_assert!(false, "presence differs"),
            }
        }
    }
}

#[test]
fn state_table_round_trips_through_csv() {
    let names = ["State", "X"].map(String::from).to_vec();
    let rows = vec![
        vec![Cell::Text("Ohio".into()), Cell::Numeric(1.5)],
        vec![Cell::Text("Iowa".into()), Cell::Missing(MissingCode::DOT)],
        vec![Cell::Text("Ohio".into()), Cell::Numeric(2.5)],
    ];
    let spec = IndicatorSpec {
        name: "X".into(),
        source: "t".into(),
        column: "X".into(),
        unit: "u".into(),
        direction: Direction::VulnerabilityDecreasing,
    };
    let t = aggregate_to_state(&RawTable::new(names, rows).unwrap(), "State", &AggregationMethod::Mean, std::slice::from_ref(&spec)).unwrap();
    let csv = t.to_csv();
    assert_eq!(csv, "state,X\nIowa,\nOhio,2\n");
    let back = riskscope_core::ingest::StateIndicatorTable::from_table(
        &riskscope_core::ingest::parse_csv(csv.as_bytes(), &Default::default()).unwrap(),
        &[spec],
    )
    .unwrap();
    assert_eq!(back.states, t.states);
    assert_eq!(back.indicators[0].values, t.indicators[0].values);
    let by_state: BTreeMap<_, _> = back.states.iter().zip(&back.indicators[0].values).collect();
    assert_eq!(by_state[&"Ohio".to_string()], &Some(2.0));
}
