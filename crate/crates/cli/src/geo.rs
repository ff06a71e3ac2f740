//! Choropleth output: copy a state-boundary FeatureCollection and attach
//! EnvScore, rank, cluster label and risk reference to matching features.

use std::collections::{BTreeMap, BTreeSet};

use riskscope_core::align::RiskReference;
use riskscope_core::macroindex::EnvScoreTable;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("not valid JSON: {0}")]
    Json(String),
    #[error("top-level object must be a FeatureCollection")]
    NotFeatureCollection,
    #[error("feature {index}: {reason}")]
    BadFeature { index: usize, reason: &'static str },
}

/// Validate the parts of the document the join relies on.
pub fn parse_feature_collection(bytes: &[u8]) -> Result<Value, GeoError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| GeoError::Json(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::NotFeatureCollection);
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or(GeoError::NotFeatureCollection)?;
    for (index, f) in features.iter().enumerate() {
        let bad = |reason| GeoError::BadFeature { index, reason };
        if f.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(bad("type must be \"Feature\""));
        }
        match f.get("geometry") {
            Some(Value::Null) => {}
            Some(Value::Object(g)) if g.get("type").is_some_and(Value::is_string) => {}
            _ => return Err(bad("geometry must be an object with a type, or null")),
        }
        if !matches!(f.get("properties"), Some(Value::Object(_)) | Some(Value::Null)) {
            return Err(bad("properties must be an object or null"));
        }
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinSummary {
    pub join_property: String,
    pub features: usize,
    pub matched: usize,
    pub unmatched_features: Vec<String>,
    pub states_without_feature: Vec<String>,
}

pub struct Joined {
    pub collection: Value,
    pub summary: JoinSummary,
}

pub fn annotate(
    mut collection: Value,
    join_property: &str,
    scores: &EnvScoreTable,
    clusters: &BTreeMap<String, String>,
    reference: &RiskReference,
) -> Joined {
    let mut matched_states = BTreeSet::new();
    let mut unmatched = Vec::new();
    let features = collection["features"].as_array_mut().expect("validated feature collection");
    let n = features.len();
    for (i, f) in features.iter_mut().enumerate() {
        let key = f["properties"].get(join_property).and_then(|v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(x) => Some(x.to_string()),
            _ => None,
        });
        let row = key.as_deref().and_then(|k| scores.get(k));
        let Some(row) = row else {
            unmatched.push(key.unwrap_or_else(|| format!("#{i}")));
            continue;
        };
        if f["properties"].is_null() {
            f["properties"] = Value::Object(Map::new());
        }
        let props = f["properties"].as_object_mut().expect("properties is an object");
        props.insert("env_score".into(), json!(row.score));
        props.insert("env_rank".into(), json!(row.rank));
        props.insert("cluster_label".into(), json!(clusters.get(&row.state)));
        props.insert("national_risk".into(), json!(reference.for_state(&row.state)));
        matched_states.insert(row.state.clone());
    }
    let summary = JoinSummary {
        join_property: join_property.to_string(),
        features: n,
        matched: n - unmatched.len(),
        unmatched_features: unmatched,
        states_without_feature: scores
            .rows
            .iter()
            .filter(|r| !matched_states.contains(&r.state))
            .map(|r| r.state.clone())
            .collect(),
    };
    collection["riskscope_join"] = serde_json::to_value(&summary).expect("summary serializes");
    Joined { collection, summary }
}

#[cfg(test)]
mod tests {
    use super::*;
    use riskscope_core::macroindex::EnvScoreRow;

    fn scores() -> EnvScoreTable {
        EnvScoreTable {
            rows: vec![EnvScoreRow { state: "Mississippi".into(), score: 0.55, rank: 1, n_used: 3, coverage: 1.0 }],
            n_indicators: 3,
            unscored: vec![],
        }
    }

    #[test]
    fn matching_feature_gains_four_properties() {
        let doc = br#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"NAME":"Mississippi"},"geometry":null},
            {"type":"Feature","properties":{"NAME":"Puerto Rico"},"geometry":null}]}"#;
        let fc = parse_feature_collection(doc).unwrap();
        let clusters = BTreeMap::from([("Mississippi".to_string(), "High".to_string())]);
        let j = annotate(fc, "NAME", &scores(), &clusters, &RiskReference::National { value: 0.3 });
        let props = j.collection["features"][0]["properties"].as_object().unwrap();
        assert_eq!(props.len(), 5);
        assert_eq!(props["env_score"], json!(0.55));
        assert_eq!(props["cluster_label"], json!("High"));
        assert_eq!(j.collection["features"][1]["properties"].as_object().unwrap().len(), 1);
        assert_eq!(j.summary.unmatched_features, vec!["Puerto Rico".to_string()]);
    }

    #[test]
    fn empty_collection_is_valid() {
        let fc = parse_feature_collection(br#"{"type":"FeatureCollection","features":[]}"#).unwrap();
        let j = annotate(fc, "NAME", &scores(), &BTreeMap::new(), &RiskReference::National { value: 0.3 });
        assert_eq!(j.summary.features, 0);
        assert_eq!(j.summary.states_without_feature, vec!["Mississippi".to_string()]);
    }

    #[test]
    fn invalid_documents_are_rejected() {
        assert!(matches!(parse_feature_collection(b"{"), Err(GeoError::Json(_))));
        assert_eq!(parse_feature_collection(br#"{"type":"Feature"}"#), Err(GeoError::NotFeatureCollection));
        let bad = br#"{"type":"FeatureCollection","features":[{"type":"Feature","geometry":7,"properties":{}}]}"#;
        assert!(matches!(parse_feature_collection(bad), Err(GeoError::BadFeature { index: 0, .. })));
    }
}
