//! GeoJSON point layers (EPSG:4326) keyed by `object_id`.

use std::path::{Path, PathBuf};

use geojson::{Feature, FeatureCollection, Geometry, JsonObject, Value};
use serde_json::json;

use super::evaluate::{AccuracyCategory, MaskedParcel};
use super::{PipelineError, Result};
use crate::decision::Strategy;
use crate::linkage::ingest::write_atomic;

pub const LAYER_NAMES: [&str; 4] = ["v1_status", "v2_status", "change_class", "accuracy_category"];

fn feature(m: &MaskedParcel, props: JsonObject) -> Feature {
    let mut properties = JsonObject::new();
    properties.insert("object_id".into(), json!(m.object_id));
    properties.extend(props);
    Feature {
        bbox: None,
        geometry: Some(Geometry::new(Value::Point(vec![m.centroid.lon(), m.centroid.lat()]))),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

fn props(pairs: &[(&str, serde_json::Value)]) -> JsonObject {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Properties of each layer for one parcel.
pub fn layer_properties(layer: &str, m: &MaskedParcel) -> JsonObject {
    match layer {
        "v1_status" | "v2_status" => {
            let v = usize::from(layer == "v2_status");
            props(&[
                ("ground_truth", json!(m.gt[v].as_str())),
                ("one_stage", json!(m.one[v].as_str())),
                ("two_stage", json!(m.two[v].as_str())),
            ])
        }
        "change_class" => props(&[
            ("ground_truth", json!(m.change(Strategy::GroundTruth).as_str())),
            ("one_stage", json!(m.change(Strategy::OneStage).as_str())),
            ("two_stage", json!(m.change(Strategy::TwoStage).as_str())),
        ]),
        _ => props(&[
            ("accuracy_category", json!(AccuracyCategory::of(m).as_str())),
            ("two_stage_correct_visits", json!(m.two_stage_correct())),
        ]),
    }
}

/// Writes one `.geojson` per layer into `dir`; returns the paths.
pub fn write_layers(dir: &Path, masked: &[MaskedParcel]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for layer in LAYER_NAMES {
        let fc = FeatureCollection {
            bbox: None,
            features: masked.iter().map(|m| feature(m, layer_properties(layer, m))).collect(),
            foreign_members: None,
        };
        let path = dir.join(format!("{layer}.geojson"));
        let text = serde_json::to_string(&fc).map_err(|e| PipelineError::Invariant(e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        out.push(path);
    }
    Ok(out)
}
