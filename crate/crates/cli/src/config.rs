//! Pipeline configuration: a JSON document plus `--set key=value` overrides.
//! Relative paths inside the document resolve against its directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use riskscope_core::align::{CorrelationMethod, OverlayColumn};
use riskscope_core::ingest::AggregationMethod;
use riskscope_core::learn::{ForestParams, GbdtParams, LogisticConfig};
use riskscope_core::macroindex::StdConvention;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    pub output_dir: PathBuf,
    pub split: SplitConfig,
    pub models: ModelsConfig,
    pub explain: ExplainConfig,
    pub envscore: EnvScoreConfig,
    pub cluster: ClusterConfig,
    pub align: AlignConfig,
    #[serde(default)]
    pub map: MapConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub demographics: PathBuf,
    pub body_measures: PathBuf,
    #[serde(default = "default_join_key")]
    pub join_key: String,
    pub usda: PathBuf,
    pub epa: PathBuf,
    pub lms: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub boundaries: Option<PathBuf>,
}

fn default_join_key() -> String {
    "SEQN".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Additional split seeds for the mean ± sd table.
    #[serde(default)]
    pub extra_seeds: Vec<u64>,
}

fn default_true() -> bool {
    true
}

fn default_threshold() -> f64 {
    riskscope_core::eval::DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub logistic: LogisticConfig,
    pub random_forest: ForestParams,
    pub gbdt_level_wise: GbdtParams,
    pub gbdt_leaf_wise: GbdtParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    /// Artifact key under `models/`.
    pub model: String,
    /// Test rows explained, taken in split order.
    pub max_rows: usize,
    pub background_rows: usize,
    pub seed: u64,
    #[serde(default = "default_max_players")]
    pub max_players: usize,
}

fn default_max_players() -> usize {
    riskscope_core::explain::DEFAULT_MAX_PLAYERS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvScoreConfig {
    pub state_key: String,
    /// Per-source county-to-state aggregation; sources not listed use the mean.
    #[serde(default)]
    pub aggregation: BTreeMap<String, AggregationMethod>,
    /// Indicator names (from the schema) entering EnvScore.
    pub indicators: Vec<String>,
    #[serde(default)]
    pub std_convention: StdConvention,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub risk_model: String,
    pub top_n: usize,
    #[serde(default = "default_method")]
    pub method: CorrelationMethod,
    pub columns: Vec<OverlayColumn>,
    #[serde(default)]
    pub stratified_reference: Option<StratifiedReferenceConfig>,
}

fn default_method() -> CorrelationMethod {
    CorrelationMethod::Pearson
}

/// Synthetic per-state reference built from state demographic margins.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratifiedReferenceConfig {
    /// CSV with columns `state,stratum,share`.
    pub margins: PathBuf,
    /// Categorical predictor whose level labels name the strata.
    pub stratum_variable: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub join_property: String,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { join_property: "NAME".into() }
    }
}

/// Set a dotted key in a JSON document. The value is parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Parse(format!("--set {assignment:?}: expected KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Parse(format!("--set {assignment:?}: empty key segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Parse(format!("--set {assignment:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}

impl PipelineConfig {
    /// Read, override, deserialize and resolve paths. `out` replaces
    /// `output_dir` and is taken relative to the working directory; `seed`
    /// replaces every seed in the document.
    pub fn load(path: &Path, overrides: &[String], out: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::parse(path, e))?;
        let mut doc: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::parse(path, e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: PipelineConfig = serde_json::from_value(doc).map_err(|e| CliError::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        if let Some(out) = out {
            cfg.output_dir = out.to_path_buf();
        }
        if let Some(s) = seed {
            cfg.split.seed = s;
            cfg.models.random_forest.seed = s;
            cfg.explain.seed = s;
            cfg.cluster.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.demographics, &mut i.body_measures, &mut i.usda, &mut i.epa, &mut i.lms, &mut i.schema] {
            join(p);
        }
        if let Some(b) = i.boundaries.as_mut() {
            join(b);
        }
        if let Some(s) = self.align.stratified_reference.as_mut() {
            join(&mut s.margins);
        }
        join(&mut self.output_dir);
    }

    fn validate(&self) -> CliResult<()> {
        let i = &self.inputs;
        let mut paths = vec![&i.demographics, &i.body_measures, &i.usda, &i.epa, &i.lms, &i.schema];
        paths.extend(i.boundaries.as_ref());
        paths.extend(self.align.stratified_reference.as_ref().map(|s| &s.margins));
        for p in paths {
            if !p.is_file() {
                return Err(CliError::Parse(format!("{}: input file not found", p.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.split.threshold) {
            return Err(CliError::Parse(format!("split.threshold {} is outside [0, 1]", self.split.threshold)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_override_parses_json_or_string() {
        let mut doc = json!({"a": {"b": 1}, "c": "x"});
        apply_override(&mut doc, "a.b=7").unwrap();
        apply_override(&mut doc, "a.d.e=[1,2]").unwrap();
        apply_override(&mut doc, "c=plain text").unwrap();
        assert_eq!(doc, json!({"a": {"b": 7, "d": {"e": [1, 2]}}, "c": "plain text"}));
        assert_eq!(apply_override(&mut doc, "c.x=1").unwrap_err().exit_code(), 2);
        assert!(apply_override(&mut doc, "novalue").is_err());
    }
}
