//! The pipeline verbs. Each reads its inputs from the configured files or
//! from artifacts written by an earlier verb, and writes plain CSV/JSON/
//! Markdown into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use riskscope_core::align::{
    national_mean_risk, overlay_table, stratified_reference, AlignError, AlignmentReport, RiskReference,
};
use riskscope_core::cluster::{
    clusters_csv, feature_points, kmeans, label_clusters, ClusterError, ClusterLabel, ClusterResult, KMeansParams,
};
use riskscope_core::eval::{accuracy, mean_std, roc_auc, split_70_30, EvalError, MetricsReport, ModelMetrics, SeedSummary};
use riskscope_core::explain::{
    attributions_csv, global_importance, players_from_layout, sample_background, shapley_exact, Importance,
};
use riskscope_core::growth::GrowthReference;
use riskscope_core::ingest::{
    aggregate_to_state, build_cohort, parse_csv, parse_xpt, AggregationError, AggregationMethod, Cohort, CohortError,
    CsvOptions, IndicatorSpec, RawTable, Recoded, SchemaFile, StateIndicatorTable, TableError,
};
use riskscope_core::learn::{
    encode_cohort, fit_forest, fit_gbdt, fit_logistic, FeatureMatrix, LearnError, Model, ModelArtifact,
};
use riskscope_core::macroindex::{
    descriptive_stats, envscore, minmax_normalize, EnvScoreTable, IndexError, NormalizedTable,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::geo;

pub const COHORT_CSV: &str = "cohort.csv";
pub const INDICATORS_CSV: &str = "indicators.csv";
pub const INGEST_MANIFEST: &str = "ingest_manifest.json";
pub const ENVSCORE_PROVENANCE: &str = "envscore_provenance.json";
pub const CENTROIDS_JSON: &str = "centroids.json";
pub const ALIGNMENT_JSON: &str = "alignment.json";

/// Artifact key and display name of each learner, in report order.
pub const MODELS: [(&str, &str); 4] = [
    ("logistic", "Logistic Regression"),
    ("random_forest", "Random Forest"),
    ("gbdt_level_wise", "XGBoost-like GBDT (level-wise)"),
    ("gbdt_leaf_wise", "LightGBM-like GBDT (leaf-wise)"),
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::parse(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts serialize to JSON");
    s.push('\n');
    s
}

struct Out<'a> {
    dir: &'a Path,
}

impl Out<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write an artifact and return its sha256.
    fn write(&self, name: &str, contents: &str) -> CliResult<String> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        info!("wrote {}", path.display());
        Ok(sha256_hex(contents.as_bytes()))
    }

    fn require(&self, name: &str, command: &'static str) -> CliResult<Vec<u8>> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::MissingUpstream { artifact: path.display().to_string(), command });
        }
        fs::read(&path).map_err(|e| CliError::io(&path, e))
    }

    fn require_json<T: for<'de> Deserialize<'de>>(&self, name: &str, command: &'static str) -> CliResult<T> {
        let bytes = self.require(name, command)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::parse(&self.path(name), e))
    }

    fn require_csv(&self, name: &str, command: &'static str) -> CliResult<RawTable> {
        let bytes = self.require(name, command)?;
        parse_csv(&bytes, &CsvOptions::default()).map_err(|e| CliError::parse(&self.path(name), e))
    }
}

fn out(cfg: &PipelineConfig) -> Out<'_> {
    Out { dir: &cfg.output_dir }
}

fn load_schema(cfg: &PipelineConfig) -> CliResult<SchemaFile> {
    let path = &cfg.inputs.schema;
    SchemaFile::from_json(&read_input(path)?).map_err(|e| CliError::schema(path, e))
}

fn learn_error(context: &str, e: LearnError) -> CliError {
    match e {
        LearnError::SingleClassInput | LearnError::NumericalDegeneracy | LearnError::InsufficientRows { .. } => {
            CliError::Degenerate(format!("{context}: {e}"))
        }
        LearnError::LayoutMismatch => CliError::MissingUpstream {
            artifact: format!("{context} matching the current cohort layout"),
            command: "train-eval",
        },
        _ => CliError::Schema(format!("{context}: {e}")),
    }
}

fn eval_error(e: EvalError) -> CliError {
    CliError::Degenerate(format!("evaluation: {e}"))
}

fn table_error(path: &Path, e: TableError) -> CliError {
    match e {
        TableError::MissingColumn(_) => CliError::schema(path, e),
        _ => CliError::parse(path, e),
    }
}

fn aggregation_error(path: &Path, e: AggregationError) -> CliError {
    match e {
        AggregationError::MissingColumn(_) | AggregationError::DuplicateIndicator(_) => CliError::schema(path, e),
        _ => CliError::Degenerate(format!("{}: {e}", path.display())),
    }
}

// ---------------------------------------------------------------- ingest

pub fn ingest(cfg: &PipelineConfig) -> CliResult<()> {
    let schema = load_schema(cfg)?;
    let inputs = &cfg.inputs;
    let lms_bytes = read_input(&inputs.lms)?;
    let growth = GrowthReference::from_csv(&lms_bytes).map_err(|e| CliError::parse(&inputs.lms, e))?;

    let demo_bytes = read_input(&inputs.demographics)?;
    let bmx_bytes = read_input(&inputs.body_measures)?;
    let demo = parse_xpt(&demo_bytes).map_err(|e| CliError::parse(&inputs.demographics, e))?;
    let bmx = parse_xpt(&bmx_bytes).map_err(|e| CliError::parse(&inputs.body_measures, e))?;
    let joined = demo
        .left_join(&bmx, &inputs.join_key)
        .map_err(|e| table_error(&inputs.body_measures, e))?;
    let build = build_cohort(&joined, &schema.variables, &growth).map_err(|e| match e {
        CohortError::EmptyCohort => CliError::Degenerate(format!("{}: {e}", inputs.demographics.display())),
        _ => CliError::schema(&inputs.demographics, e),
    })?;
    info!("cohort: kept {} of {} rows", build.report.kept, build.report.input_rows);

    let mut macro_rows = BTreeMap::new();
    let mut macro_bytes = Vec::new();
    let mut merged: Option<StateIndicatorTable> = None;
    for (source, path) in [("usda", &inputs.usda), ("epa", &inputs.epa)] {
        let specs: Vec<IndicatorSpec> = schema.indicators.iter().filter(|s| s.source == source).cloned().collect();
        let bytes = read_input(path)?;
        let table = parse_csv(&bytes, &CsvOptions::default()).map_err(|e| CliError::parse(path, e))?;
        macro_rows.insert(source, table.n_rows());
        macro_bytes.push((source, path, bytes));
        if specs.is_empty() {
            continue;
        }
        let method = cfg.envscore.aggregation.get(source).cloned().unwrap_or(AggregationMethod::Mean);
        let t = aggregate_to_state(&table, &cfg.envscore.state_key, &method, &specs)
            .map_err(|e| aggregation_error(path, e))?;
        merged = Some(match merged {
            None => t,
            Some(m) => m.merge(&t).map_err(|e| aggregation_error(path, e))?,
        });
    }
    if let Some(unknown) = schema.indicators.iter().find(|s| s.source != "usda" && s.source != "epa") {
        return Err(CliError::schema(
            &inputs.schema,
            format!("indicator {:?} has unknown source {:?} (expected usda or epa)", unknown.name, unknown.source),
        ));
    }
    let indicators = merged.unwrap_or(StateIndicatorTable { states: vec![], indicators: vec![] });

    let o = out(cfg);
    let cohort_sha = o.write(COHORT_CSV, &build.cohort.to_csv())?;
    let indicators_sha = o.write(INDICATORS_CSV, &indicators.to_csv())?;

    let file_entry = |role: &str, path: &Path, bytes: &[u8]| {
        json!({
            "role": role,
            "file": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "bytes": bytes.len(),
            "sha256": sha256_hex(bytes),
        })
    };
    let mut input_files = vec![
        file_entry("demographics", &inputs.demographics, &demo_bytes),
        file_entry("body_measures", &inputs.body_measures, &bmx_bytes),
        file_entry("lms_reference", &inputs.lms, &lms_bytes),
        file_entry("schema", &inputs.schema, &read_input(&inputs.schema)?),
    ];
    for (source, path, bytes) in &macro_bytes {
        input_files.push(file_entry(source, path, bytes));
    }
    let positives = build.cohort.records.iter().filter(|r| r.label == 1).count();
    let manifest = json!({
        "inputs": input_files,
        "nhanes": {
            "demographics_rows": demo.n_rows(),
            "body_measures_rows": bmx.n_rows(),
            "join_key": inputs.join_key,
        },
        "cohort": build.report,
        "labels": { "obese": positives, "not_obese": build.cohort.len() - positives },
        "macro_rows": macro_rows,
        "indicators": indicators.indicators.iter().map(|i| json!({
            "name": i.name,
            "direction": i.direction,
            "coverage": i.coverage,
            "states_with_value": i.values.iter().filter(|v| v.is_some()).count(),
        })).collect::<Vec<_>>(),
        "states": indicators.states.len(),
        "outputs": { COHORT_CSV: cohort_sha, INDICATORS_CSV: indicators_sha },
    });
    o.write(INGEST_MANIFEST, &to_json(&manifest))?;
    Ok(())
}

fn load_cohort(cfg: &PipelineConfig, schema: &SchemaFile) -> CliResult<Cohort> {
    let o = out(cfg);
    let table = o.require_csv(COHORT_CSV, "ingest")?;
    Cohort::from_table(&table, &schema.variables).map_err(|e| match e {
        CohortError::EmptyCohort => CliError::Degenerate(format!("{COHORT_CSV}: {e}")),
        _ => CliError::parse(&o.path(COHORT_CSV), e),
    })
}

// ------------------------------------------------------------ train-eval

fn fit_model(cfg: &PipelineConfig, key: &str, x: &FeatureMatrix, y: &[u8]) -> Result<Model, LearnError> {
    let m = &cfg.models;
    Ok(match key {
        "logistic" => Model::Logistic(fit_logistic(x, y, &m.logistic)?.model),
        "random_forest" => Model::Forest(fit_forest(x, y, &m.random_forest)?),
        "gbdt_level_wise" => Model::Boosted(fit_gbdt(x, y, &m.gbdt_level_wise)?.model),
        "gbdt_leaf_wise" => Model::Boosted(fit_gbdt(x, y, &m.gbdt_leaf_wise)?.model),
        other => unreachable!("unknown model key {other}"),
    })
}

struct SplitRun {
    test: Vec<usize>,
    n_train: usize,
    fitted: Vec<(ModelArtifact, Vec<f64>, ModelMetrics)>,
}

fn run_split(cfg: &PipelineConfig, x: &FeatureMatrix, y: &[u8], seed: u64) -> CliResult<SplitRun> {
    let split = split_70_30(x.n(), y, seed, cfg.split.stratified).map_err(eval_error)?;
    let (xtr, xte) = (x.select(&split.train), x.select(&split.test));
    let ytr: Vec<u8> = split.train.iter().map(|&i| y[i]).collect();
    let yte: Vec<u8> = split.test.iter().map(|&i| y[i]).collect();
    let mut fitted = Vec::with_capacity(MODELS.len());
    for (key, name) in MODELS {
        let model = fit_model(cfg, key, &xtr, &ytr).map_err(|e| learn_error(key, e))?;
        let artifact = ModelArtifact::new(key, x.layout().clone(), model);
        let probs = artifact.predict_matrix(&xte).map_err(|e| learn_error(key, e))?;
        let (acc, confusion) = accuracy(&probs, &yte, cfg.split.threshold).map_err(eval_error)?;
        let auc = roc_auc(&probs, &yte).map_err(eval_error)?;
        info!("seed {seed}: {name} accuracy {acc:.3} auc {auc:.3}");
        let metrics = ModelMetrics { model: name.to_string(), accuracy: acc, auc, confusion };
        fitted.push((artifact, probs, metrics));
    }
    Ok(SplitRun { n_train: split.train.len(), test: split.test, fitted })
}

pub fn train_eval(cfg: &PipelineConfig) -> CliResult<()> {
    let schema = load_schema(cfg)?;
    let cohort = load_cohort(cfg, &schema)?;
    let (x, y) = encode_cohort(&cohort).map_err(|e| learn_error(COHORT_CSV, e))?;
    if y.iter().all(|&v| v == y[0]) {
        return Err(CliError::Degenerate(format!("{COHORT_CSV}: every record has label {}", y[0])));
    }
    let main = run_split(cfg, &x, &y, cfg.split.seed)?;

    let mut multi_seed = Vec::new();
    if !cfg.split.extra_seeds.is_empty() {
        let mut seeds = vec![cfg.split.seed];
        seeds.extend(cfg.split.extra_seeds.iter().copied().filter(|&s| s != cfg.split.seed));
        let mut per_model: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![], vec![]); MODELS.len()];
        for (k, (_, _, m)) in main.fitted.iter().enumerate() {
            per_model[k].0.push(m.accuracy);
            per_model[k].1.push(m.auc);
        }
        for &seed in &seeds[1..] {
            let run = run_split(cfg, &x, &y, seed)?;
            for (k, (_, _, m)) in run.fitted.iter().enumerate() {
                per_model[k].0.push(m.accuracy);
                per_model[k].1.push(m.auc);
            }
        }
        for ((_, name), (accs, aucs)) in MODELS.iter().zip(per_model) {
            let (accuracy_mean, accuracy_std) = mean_std(&accs).map_err(eval_error)?;
            let (auc_mean, auc_std) = mean_std(&aucs).map_err(eval_error)?;
            multi_seed.push(SeedSummary {
                model: name.to_string(),
                seeds: seeds.clone(),
                accuracy_mean,
                accuracy_std,
                auc_mean,
                auc_std,
            });
        }
    }

    let o = out(cfg);
    let report = MetricsReport {
        split_seed: cfg.split.seed,
        stratified: cfg.split.stratified,
        n_train: main.n_train,
        n_test: main.test.len(),
        threshold: cfg.split.threshold,
        models: main.fitted.iter().map(|(_, _, m)| m.clone()).collect(),
        multi_seed,
    };
    for (artifact, _, _) in &main.fitted {
        o.write(&format!("models/{}.json", artifact.name), &(artifact.to_json() + "\n"))?;
    }
    let mut preds = String::from("id,label");
    for (key, _) in MODELS {
        preds.push(',');
        preds.push_str(key);
    }
    preds.push('\n');
    for (row, &i) in main.test.iter().enumerate() {
        let r = &cohort.records[i];
        preds.push_str(&format!("{},{}", r.id, r.label));
        for (_, probs, _) in &main.fitted {
            preds.push_str(&format!(",{}", probs[row]));
        }
        preds.push('\n');
    }
    o.write("predictions.csv", &preds)?;
    o.write("metrics.json", &to_json(&report))?;
    o.write("metrics.md", &report.to_markdown())?;
    Ok(())
}

fn load_model(cfg: &PipelineConfig, key: &str) -> CliResult<ModelArtifact> {
    if !MODELS.iter().any(|(k, _)| *k == key) {
        return Err(CliError::Parse(format!(
            "unknown model {key:?} (expected one of {:?})",
            MODELS.map(|(k, _)| k)
        )));
    }
    let o = out(cfg);
    let name = format!("models/{key}.json");
    let bytes = o.require(&name, "train-eval")?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::parse(&o.path(&name), e))?;
    ModelArtifact::from_json(&text).map_err(|e| CliError::parse(&o.path(&name), e))
}

// --------------------------------------------------------------- explain

pub fn explain(cfg: &PipelineConfig) -> CliResult<()> {
    let schema = load_schema(cfg)?;
    let cohort = load_cohort(cfg, &schema)?;
    let artifact = load_model(cfg, &cfg.explain.model)?;
    let (x, y) = encode_cohort(&cohort).map_err(|e| learn_error(COHORT_CSV, e))?;
    if x.layout() != &artifact.layout {
        return Err(learn_error(&format!("models/{}.json", artifact.name), LearnError::LayoutMismatch));
    }
    let split = split_70_30(x.n(), &y, cfg.split.seed, cfg.split.stratified).map_err(eval_error)?;
    let background = sample_background(&x.select(&split.train), cfg.explain.background_rows, cfg.explain.seed);
    let rows: Vec<usize> = split.test.iter().copied().take(cfg.explain.max_rows).collect();
    let players = players_from_layout(&artifact.layout);
    let mut attributions = Vec::with_capacity(rows.len());
    for &i in &rows {
        let a = shapley_exact(&artifact.model, x.row(i), &background, &players, cfg.explain.max_players)
            .map_err(|e| CliError::Schema(format!("explain: {e}")))?;
        attributions.push(a);
    }
    let ids: Vec<String> = rows.iter().map(|&i| cohort.records[i].id.clone()).collect();
    let importance: Vec<Importance> = global_importance(&attributions, &players);
    let max_gap = attributions.iter().map(|a| a.additivity_gap()).fold(0.0, f64::max);
    let summary = json!({
        "model": artifact.name,
        "rows_explained": rows.len(),
        "background_rows": background.n(),
        "players": players.iter().map(|p| &p.name).collect::<Vec<_>>(),
        "base_value": attributions.first().map(|a| a.base),
        "max_additivity_gap": max_gap,
        "importance": importance,
    });
    let o = out(cfg);
    o.write("shap_values.csv", &attributions_csv(&ids, &attributions, &players))?;
    o.write("shap_importance.json", &to_json(&summary))?;
    Ok(())
}

// -------------------------------------------------------------- envscore

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndicatorProvenance {
    pub name: String,
    pub unit: String,
    pub direction: riskscope_core::ingest::Direction,
    pub min: f64,
    pub max: f64,
}

/// Contents of `envscore_provenance.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvScoreArtifact {
    pub indicators: Vec<IndicatorProvenance>,
    pub normalized: NormalizedTable,
    pub scores: EnvScoreTable,
}

fn indicator_specs(schema: &SchemaFile, names: &[String], path: &Path) -> CliResult<Vec<IndicatorSpec>> {
    names
        .iter()
        .map(|n| {
            schema
                .indicators
                .iter()
                .find(|s| &s.name == n)
                .cloned()
                .ok_or_else(|| CliError::schema(path, format!("indicator {n:?} is not declared in the schema")))
        })
        .collect()
}

fn load_indicators(cfg: &PipelineConfig, specs: &[IndicatorSpec]) -> CliResult<StateIndicatorTable> {
    let table = out(cfg).require_csv(INDICATORS_CSV, "ingest")?;
    StateIndicatorTable::from_table(&table, specs).map_err(|e| CliError::MissingUpstream {
        artifact: format!("{INDICATORS_CSV} with the configured indicators ({e})"),
        command: "ingest",
    })
}

pub fn envscore_cmd(cfg: &PipelineConfig) -> CliResult<()> {
    let schema = load_schema(cfg)?;
    let specs = indicator_specs(&schema, &cfg.envscore.indicators, &cfg.inputs.schema)?;
    let table = load_indicators(cfg, &specs)?;
    let normalized = minmax_normalize(&table);
    let scores = envscore(&normalized).map_err(|e| match e {
        IndexError::NoIndicators => CliError::Degenerate(format!("envscore: {e}")),
        _ => CliError::Schema(format!("envscore: {e}")),
    })?;

    let mut columns = vec![("EnvScore".to_string(), {
        let mut v: Vec<(String, f64)> = scores.rows.iter().map(|r| (r.state.clone(), r.score)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v.into_iter().map(|(_, s)| s).collect::<Vec<f64>>()
    })];
    for ind in &table.indicators {
        columns.push((ind.name.clone(), ind.values.iter().flatten().copied().collect()));
    }
    columns.retain(|(_, v)| !v.is_empty());
    let stats = descriptive_stats(&columns, cfg.envscore.std_convention)
        .map_err(|e| CliError::Degenerate(format!("descriptive statistics: {e}")))?;

    let artifact = EnvScoreArtifact {
        indicators: normalized
            .indicators
            .iter()
            .map(|i| IndicatorProvenance {
                name: i.name.clone(),
                unit: i.unit.clone(),
                direction: i.direction,
                min: i.min,
                max: i.max,
            })
            .collect(),
        normalized,
        scores,
    };
    let o = out(cfg);
    o.write("envscore.csv", &artifact.scores.to_csv())?;
    o.write(ENVSCORE_PROVENANCE, &to_json(&artifact))?;
    o.write("descriptive_stats.json", &to_json(&stats))?;
    o.write("descriptive_stats.md", &stats.to_markdown())?;
    Ok(())
}

// --------------------------------------------------------------- cluster

/// Contents of `centroids.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub features: Vec<String>,
    pub states: Vec<String>,
    /// States lacking a value for some feature.
    pub excluded_states: Vec<String>,
    pub labels: Vec<ClusterLabel>,
    pub result: ClusterResult,
}

impl ClusterArtifact {
    pub fn label_of(&self, cluster: usize) -> String {
        let l = &self.labels[cluster];
        l.label.map_or_else(|| format!("cluster_{}", l.order), |v| format!("{v:?}"))
    }

    pub fn state_labels(&self) -> BTreeMap<String, String> {
        self.states
            .iter()
            .zip(&self.result.assignments)
            .map(|(s, &c)| (s.clone(), self.label_of(c)))
            .collect()
    }
}

pub fn cluster_cmd(cfg: &PipelineConfig) -> CliResult<()> {
    let o = out(cfg);
    let prov: EnvScoreArtifact = o.require_json(ENVSCORE_PROVENANCE, "envscore")?;
    let c = &cfg.cluster;
    let (states, points, excluded) = feature_points(&prov.normalized, &c.features).map_err(|e| match e {
        ClusterError::UnknownFeature(_) => CliError::Schema(format!("cluster.features: {e}")),
        _ => CliError::Degenerate(format!("cluster: {e}")),
    })?;
    if !excluded.is_empty() {
        warn!("states excluded from clustering (missing features): {}", excluded.join(", "));
    }
    let params = KMeansParams { k: c.k, seed: c.seed, restarts: c.restarts, tol: c.tol, max_iter: c.max_iter };
    let result = kmeans(&points, &params).map_err(|e| CliError::Degenerate(format!("cluster: {e}")))?;
    let labels = label_clusters(&states, &result, &prov.scores);
    o.write("clusters.csv", &clusters_csv(&states, &result, &labels))?;
    let artifact = ClusterArtifact { features: c.features.clone(), states, excluded_states: excluded, labels, result };
    o.write(CENTROIDS_JSON, &to_json(&artifact))?;
    Ok(())
}

// ----------------------------------------------------------------- align

/// Contents of `alignment.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentArtifact {
    pub risk_model: String,
    pub national_mean_risk: f64,
    pub cohort_rows: usize,
    pub report: AlignmentReport,
}

fn align_error(e: AlignError) -> CliError {
    match e {
        AlignError::EmptyPredictions => CliError::Degenerate(format!("align: {e}")),
        _ => CliError::Schema(format!("align: {e}")),
    }
}

fn read_margins(path: &Path) -> CliResult<BTreeMap<String, BTreeMap<String, f64>>> {
    let table = parse_csv(&read_input(path)?, &CsvOptions::default()).map_err(|e| CliError::parse(path, e))?;
    let col = |n: &str| table.require_column(n).map_err(|e| CliError::schema(path, e));
    let (s, k, w) = (col("state")?, col("stratum")?, col("share")?);
    let mut margins: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        let bad = || CliError::parse(path, format!("line {}: expected state, stratum and numeric share", i + 2));
        let state = riskscope_core::ingest::state_key(&row[s]).ok_or_else(bad)?;
        let stratum = row[k].key_string().ok_or_else(bad)?;
        let share = row[w].as_f64().ok_or_else(bad)?;
        *margins.entry(state).or_default().entry(stratum).or_insert(0.0) += share;
    }
    Ok(margins)
}

pub fn align_cmd(cfg: &PipelineConfig) -> CliResult<()> {
    let o = out(cfg);
    let prov: EnvScoreArtifact = o.require_json(ENVSCORE_PROVENANCE, "envscore")?;
    let clusters: ClusterArtifact = o.require_json(CENTROIDS_JSON, "cluster")?;
    let schema = load_schema(cfg)?;
    let cohort = load_cohort(cfg, &schema)?;
    let artifact = load_model(cfg, &cfg.align.risk_model)?;
    let (x, _) = encode_cohort(&cohort).map_err(|e| learn_error(COHORT_CSV, e))?;
    let probs = artifact
        .predict_matrix(&x)
        .map_err(|e| learn_error(&format!("models/{}.json", artifact.name), e))?;
    let national = national_mean_risk(&probs).map_err(align_error)?;

    let reference = match &cfg.align.stratified_reference {
        None => RiskReference::National { value: national },
        Some(sr) => {
            let var = sr.stratum_variable.to_uppercase();
            let strata = cohort
                .records
                .iter()
                .map(|r| match r.predictors.get(&var) {
                    Some(Recoded::Level(l)) => Ok(l.clone()),
                    _ => Err(CliError::Schema(format!("{var} is not a categorical predictor in the cohort"))),
                })
                .collect::<CliResult<Vec<_>>>()?;
            let values = stratified_reference(&probs, &strata, &read_margins(&sr.margins)?).map_err(align_error)?;
            warn!("stratified reference enabled: state risk values are synthetic");
            RiskReference::StratifiedSynthetic { values }
        }
    };

    let all_names: Vec<String> = schema.indicators.iter().map(|s| s.name.clone()).collect();
    let specs = indicator_specs(&schema, &all_names, &cfg.inputs.schema)?;
    let indicators = load_indicators(cfg, &specs)?;
    for c in &cfg.align.columns {
        if indicators.indicator(&c.indicator).is_none() {
            return Err(CliError::schema(&cfg.inputs.schema, format!("align column {:?} names no indicator", c.indicator)));
        }
    }
    let report = overlay_table(
        &prov.scores,
        &clusters.state_labels(),
        &indicators,
        &reference,
        &cfg.align.columns,
        cfg.align.top_n,
        cfg.align.method,
    )
    .map_err(align_error)?;
    if !report.dropped_states.is_empty() {
        let names: Vec<&str> = report.dropped_states.iter().map(|d| d.state.as_str()).collect();
        warn!("states missing from some inputs were left out: {}", names.join(", "));
    }
    o.write("alignment.csv", &report.to_csv())?;
    o.write("alignment.md", &report.to_markdown())?;
    let artifact = AlignmentArtifact {
        risk_model: artifact.name,
        national_mean_risk: national,
        cohort_rows: cohort.len(),
        report,
    };
    o.write(ALIGNMENT_JSON, &to_json(&artifact))?;
    Ok(())
}

// ------------------------------------------------------------------- map

pub fn map_cmd(cfg: &PipelineConfig) -> CliResult<()> {
    let path = cfg
        .inputs
        .boundaries
        .as_ref()
        .ok_or_else(|| CliError::Parse("inputs.boundaries is not configured".into()))?;
    let o = out(cfg);
    let prov: EnvScoreArtifact = o.require_json(ENVSCORE_PROVENANCE, "envscore")?;
    let clusters: ClusterArtifact = o.require_json(CENTROIDS_JSON, "cluster")?;
    let alignment: AlignmentArtifact = o.require_json(ALIGNMENT_JSON, "align")?;
    let bytes = read_input(path)?;
    let input = geo::parse_feature_collection(&bytes).map_err(|e| CliError::Geo(format!("{}: {e}", path.display())))?;
    let joined = geo::annotate(
        input,
        &cfg.map.join_property,
        &prov.scores,
        &clusters.state_labels(),
        &alignment.report.reference,
    );
    if joined.summary.features == 0 {
        warn!("{}: feature collection is empty", path.display());
    }
    if !joined.summary.unmatched_features.is_empty() {
        warn!("boundary features without a state match: {}", joined.summary.unmatched_features.join(", "));
    }
    if !joined.summary.states_without_feature.is_empty() {
        warn!("scored states without a boundary feature: {}", joined.summary.states_without_feature.join(", "));
    }
    o.write("choropleth.geojson", &to_json(&joined.collection))?;
    Ok(())
}

pub fn all(cfg: &PipelineConfig) -> CliResult<()> {
    ingest(cfg)?;
    train_eval(cfg)?;
    explain(cfg)?;
    envscore_cmd(cfg)?;
    cluster_cmd(cfg)?;
    align_cmd(cfg)?;
    if cfg.inputs.boundaries.is_some() {
        map_cmd(cfg)?;
    } else {
        info!("no boundary file configured; skipping map");
    }
    Ok(())
}
