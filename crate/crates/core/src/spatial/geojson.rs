use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::{CoveragePolygon, Tessellation};
use crate::error::{Error, Result};
use crate::event_detection::LevelThresholds;
use crate::types::SiteId;

fn ring_json(tess: &Tessellation, ring: &[super::Point]) -> Value {
    let mut coords: Vec<Value> = tess.to_lon_lat(ring).into_iter().map(|(lon, lat)| json!([lon, lat])).collect();
    if let Some(first) = coords.first().cloned() {
        coords.push(first);
    }
    Value::Array(coords)
}

fn geometry_json(tess: &Tessellation, poly: &CoveragePolygon) -> Value {
    match poly.rings.as_slice() {
        [] => Value::Null,
        [ring] => json!({"type": "Polygon", "coordinates": [ring_json(tess, ring)]}),
        rings => json!({
            "type": "MultiPolygon",
            "coordinates": rings.iter().map(|r| json!([ring_json(tess, r)])).collect::<Vec<_>>(),
        }),
    }
}

fn feature(geometry: Value, properties: Map<String, Value>) -> Value {
    json!({"type": "Feature", "properties": properties, "geometry": geometry})
}

/// Coverage areas in WGS84 with site id, clipping flag and area.
pub fn coverage_geojson(tess: &Tessellation) -> Value {
    let features: Vec<Value> = tess
        .polygons
        .iter()
        .map(|p| {
            let mut props = Map::new();
            props.insert("site_id".into(), json!(p.site.0));
            props.insert("clipped".into(), json!(p.clipped));
            props.insert("area_km2".into(), json!(p.area()));
            feature(geometry_json(tess, p), props)
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// One feature per valued site, in site order.
pub fn export_choropleth(tess: &Tessellation, values: &BTreeMap<SiteId, f64>, classes: &LevelThresholds) -> Result<Value> {
    let mut features = Vec::with_capacity(values.len());
    for (&site, &value) in values {
        let poly = tess.polygons.get(site.index()).ok_or(Error::UnknownSite(site.0))?;
        let mut props = Map::new();
        props.insert("site_id".into(), json!(site.0));
        props.insert("value".into(), json!(value));
        props.insert("class".into(), json!(classes.classify(value)));
        features.push(feature(geometry_json(tess, poly), props));
    }
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoroplethFeature {
    pub site: SiteId,
    pub value: f64,
    pub class: String,
    /// Outer rings in lon/lat, closing vertex dropped.
    pub rings: Vec<Vec<(f64, f64)>>,
}

fn bad(what: &str) -> Error {
    Error::Data(format!("geojson: {what}"))
}

fn parse_ring(v: &Value) -> Result<Vec<(f64, f64)>> {
    let mut ring = v
        .as_array()
        .ok_or_else(|| bad("ring is not an array"))?
        .iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([x, y, ..]) => Ok((x.as_f64().ok_or_else(|| bad("bad lon"))?, y.as_f64().ok_or_else(|| bad("bad lat"))?)),
            _ => Err(bad("bad position")),
        })
        .collect::<Result<Vec<_>>>()?;
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    Ok(ring)
}

/// Outer rings of a Polygon or MultiPolygon geometry. Holes are rejected.
fn parse_geometry(g: &Value) -> Result<Vec<Vec<(f64, f64)>>> {
    if g.is_null() {
        return Ok(Vec::new());
    }
    let coords = g.get("coordinates").ok_or_else(|| bad("geometry without coordinates"))?;
    let polygons: Vec<&Value> = match g.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![coords],
        Some("MultiPolygon") => coords.as_array().ok_or_else(|| bad("bad MultiPolygon"))?.iter().collect(),
        other => return Err(bad(&format!("unsupported geometry {other:?}"))),
    };
    polygons
        .into_iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([outer]) => parse_ring(outer),
            Some([_, _, ..]) => Err(bad("polygons with holes are not supported")),
            _ => Err(bad("empty polygon")),
        })
        .collect()
}

fn features(doc: &Value) -> Result<Vec<&Value>> {
    match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => {
            Ok(doc.get("features").and_then(Value::as_array).ok_or_else(|| bad("no features"))?.iter().collect())
        }
        Some("Feature") => Ok(vec![doc]),
        _ => Err(bad("expected a Feature or FeatureCollection")),
    }
}

pub fn parse_choropleth(doc: &Value) -> Result<Vec<ChoroplethFeature>> {
    features(doc)?
        .into_iter()
        .map(|f| {
            let props = f.get("properties").ok_or_else(|| bad("feature without properties"))?;
            let site = props.get("site_id").and_then(Value::as_u64).ok_or_else(|| bad("missing site_id"))?;
            Ok(ChoroplethFeature {
                site: SiteId(u32::try_from(site).map_err(|_| bad("site_id out of range"))?),
                value: props.get("value").and_then(Value::as_f64).ok_or_else(|| bad("missing value"))?,
                class: props.get("class").and_then(Value::as_str).ok_or_else(|| bad("missing class"))?.to_string(),
                rings: parse_geometry(f.get("geometry").unwrap_or(&Value::Null))?,
            })
        })
        .collect()
}

/// Boundary parts from a geometry, Feature or FeatureCollection.
pub fn read_boundary(doc: &Value) -> Result<Vec<Vec<(f64, f64)>>> {
    let rings = match doc.get("type").and_then(Value::as_str) {
        Some("Polygon" | "MultiPolygon") => parse_geometry(doc)?,
        _ => {
            let mut rings = Vec::new();
            for f in features(doc)? {
                rings.extend(parse_geometry(f.get("geometry").unwrap_or(&Value::Null))?);
            }
            rings
        }
    };
    if rings.is_empty() {
        return Err(bad("boundary has no polygons"));
    }
    Ok(rings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CellLocation;
    use crate::spatial::{merge_cells, tessellate, VoronoiOptions};
    use crate::types::CellId;

    fn tess() -> Tessellation {
        let cells: Vec<CellLocation> = [(19.0, 47.5), (19.1, 47.5), (19.05, 47.56)]
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat))| CellLocation { cell: CellId(i as u32), lon, lat })
            .collect();
        tessellate(&merge_cells(&cells), None, &VoronoiOptions::default()).unwrap()
    }

    #[test]
    fn choropleth_round_trip() {
        let t = tess();
        let values = BTreeMap::from([(SiteId(0), -5.0), (SiteId(1), 0.5), (SiteId(2), 9.0)]);
        let classes = LevelThresholds::downtown();
        let doc = export_choropleth(&t, &values, &classes).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        let back = parse_choropleth(&serde_json::from_str(&text).unwrap()).unwrap();
        let classes: Vec<&str> = back.iter().map(|f| f.class.as_str()).collect();
        assert_eq!(classes, ["low", "average", "very_high"]);
        for f in &back {
            let expected = t.to_lon_lat(&t.polygons[f.site.index()].rings[0]);
            assert_eq!(f.rings[0].len(), expected.len());
            for (a, b) in f.rings[0].iter().zip(&expected) {
                assert!((a.0 - b.0).abs() <= 1e-9 && (a.1 - b.1).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn empty_and_unknown() {
        let t = tess();
        let classes = LevelThresholds::downtown();
        let doc = export_choropleth(&t, &BTreeMap::new(), &classes).unwrap();
        assert_eq!(doc["features"].as_array().unwrap().len(), 0);
        let err = export_choropleth(&t, &BTreeMap::from([(SiteId(9), 1.0)]), &classes).unwrap_err();
        assert!(matches!(err, Error::UnknownSite(9)));
    }

    #[test]
    fn boundary_from_coverage_output() {
        let t = tess();
        let rings = read_boundary(&coverage_geojson(&t)).unwrap();
        assert_eq!(rings.len(), 3);
        let square = json!({"type": "Polygon", "coordinates": [[[19.0, 47.4], [19.2, 47.4], [19.2, 47.6], [19.0, 47.6], [19.0, 47.4]]]});
        assert_eq!(read_boundary(&square).unwrap()[0].len(), 4);
    }
}
