use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Value};

use super::stages::section_polygons;
use super::PipelineConfig;
use crate::dataset::{read_manifest, SectionKey};
use crate::ensemble::{argmax, read_any_prediction};
use crate::{ConditionClass, Error, Result};

pub const REPORT_FILE: &str = "report.geojson";

/// Writes `report.geojson`: one feature per configured section with its
/// lane polygon (null geometry when it cannot be built), the labeled class
/// and score from the manifest, and the predicted class and probabilities
/// from `predictions`. Missing values are null.
pub fn cmd_report(cfg: &PipelineConfig, predictions: &Path, manifest: &Path) -> Result<Value> {
    let manifest = read_manifest(manifest)?;
    let pred = read_any_prediction(predictions)?;
    let labels = manifest.lookup();
    let test: std::collections::HashSet<&str> = manifest.test.iter().map(|s| s.sample_id.as_str()).collect();
    let rows: HashMap<&str, &[f64; crate::NUM_CLASSES]> = pred
        .sample_ids()
        .iter()
        .map(String::as_str)
        .zip(pred.rows())
        .collect();
    let mut crs = None;
    let mut features = Vec::new();
    for (spec, poly) in section_polygons(cfg)? {
        let id = SectionKey::of(&spec).sample_id();
        let geometry = match &poly {
            Some(p) => {
                crs.get_or_insert_with(|| p.crs_id.clone());
                json!({
                    "type": "Polygon",
                    "coordinates": [p.ring.iter().map(|v| [v.x, v.y]).collect::<Vec<_>>()],
                })
            }
            None => Value::Null,
        };
        let label = labels.get(id.as_str());
        let row = rows.get(id.as_str());
        let probabilities = row.map(|r| {
            ConditionClass::ALL
                .iter()
                .zip(r.iter())
                .map(|(c, &p)| (c.name().to_string(), json!(p)))
                .collect::<serde_json::Map<_, _>>()
        });
        let split = match label {
            Some(_) if test.contains(id.as_str()) => json!("test"),
            Some(_) => json!("train"),
            None => Value::Null,
        };
        features.push(json!({
            "type": "Feature",
            "geometry": geometry,
            "properties": {
                "sample_id": id,
                "route_name": spec.route_name,
                "offset_from": spec.offset_from,
                "offset_to": spec.offset_to,
                "split": split,
                "condition_class_true": label.map(|s| s.label.name()),
                "condition_score": label.map(|s| s.condition_score),
                "condition_class_pred": row.and_then(|r| ConditionClass::from_index(argmax(&r[..]))).map(|c| c.name()),
                "probabilities": probabilities,
            },
        }));
    }
    let mut doc = json!({
        "type": "FeatureCollection",
        "features": features,
    });
    if let Some(crs) = crs {
        doc["crs"] = json!({"type": "name", "properties": {"name": crs}});
    }
    let out = cfg.path(REPORT_FILE);
    super::create_dir(&cfg.workdir)?;
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(&out, e))?;
    text.push('\n');
    std::fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
    tracing::info!(features = doc["features"].as_array().map_or(0, Vec::len), path = %out.display(), "report finished");
    Ok(doc)
}
