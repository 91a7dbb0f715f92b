//! GeoJSON FeatureCollections of polygon footprints in pixel coordinates.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{ensure_unique_ids, Footprint, Point, Polygon, Source};
use crate::scalar::Scalar;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_ring<T: Scalar>(ring: &Value) -> Result<Vec<Point<T>>> {
    let coords = ring.as_array().ok_or_else(|| bad("ring is not an array"))?;
    coords
        .iter()
        .map(|c| match c.as_array().map(Vec::as_slice) {
            Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => Ok(Point::new(T::lit(x), T::lit(y))),
                _ => Err(bad("coordinate is not numeric")),
            },
            _ => Err(bad("coordinate needs two numbers")),
        })
        .collect()
}

fn parse_feature<T: Scalar>(feature: &Value) -> Result<Footprint<T>> {
    let geometry = feature.get("geometry").ok_or_else(|| bad("feature without geometry"))?;
    let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    if kind != "Polygon" {
        return Err(bad(format!("unsupported geometry type {kind:?}")));
    }
    let rings = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("polygon without coordinates"))?;
    match rings.len() {
        1 => {}
        0 => return Err(bad("polygon without rings")),
        _ => return Err(bad("polygons with holes are not supported")),
    }
    let polygon = Polygon::new(parse_ring(&rings[0])?)?;

    let mut properties = match feature.get("properties") {
        Some(Value::Object(m)) => m.clone(),
        _ => return Err(bad("feature without properties")),
    };
    let id = match properties.remove("id") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(bad("feature id must be a string")),
        None => return Err(bad("feature without id")),
    };
    let source = match properties.remove("source") {
        None => Source::Original,
        Some(Value::String(s)) => {
            Source::parse(&s).ok_or_else(|| bad(format!("unknown source {s:?}")))?
        }
        Some(_) => return Err(bad("feature source must be a string")),
    };
    Ok(Footprint {
        id,
        polygon,
        source,
        properties,
    })
}

pub fn from_str<T: Scalar>(text: &str) -> Result<Vec<Footprint<T>>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| bad(format!("invalid JSON: {e}")))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(bad("expected a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("FeatureCollection without features"))?;
    let footprints = features.iter().map(parse_feature).collect::<Result<Vec<_>>>()?;
    ensure_unique_ids(&footprints)?;
    Ok(footprints)
}

pub fn read<T: Scalar>(path: &Path) -> Result<Vec<Footprint<T>>> {
    from_str(&fs::read_to_string(path)?)
}

fn feature<T: Scalar>(fp: &Footprint<T>) -> Value {
    let mut ring: Vec<Value> = fp
        .polygon
        .vertices()
        .iter()
        .map(|p| json!([p.x.as_f64(), p.y.as_f64()]))
        .collect();
    ring.push(ring[0].clone());
    let mut properties = Map::new();
    properties.insert("id".into(), Value::String(fp.id.clone()));
    properties.insert("source".into(), Value::String(fp.source.as_str().into()));
    for (k, v) in &fp.properties {
        properties.insert(k.clone(), v.clone());
    }
    json!({
        "type": "Feature",
        "properties": properties,
        "geometry": {"type": "Polygon", "coordinates": [ring]},
    })
}

/// Serializes with keys in a fixed order; equal collections give equal bytes.
pub fn to_string<T: Scalar>(footprints: &[Footprint<T>]) -> String {
    let doc = json!({
        "type": "FeatureCollection",
        "features": footprints.iter().map(feature).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
    text.push('\n');
    text
}

pub fn write<T: Scalar>(path: &Path, footprints: &[Footprint<T>]) -> Result<()> {
    ensure_unique_ids(footprints)?;
    fs::write(path, to_string(footprints))?;
    Ok(())
}
