//! Readers and writers for the linkage stage's files: parcel layers
//! (GeoJSON or CSV), per-video GPS logs, video metadata, and the matched,
//! manifest and drop tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use geojson::{GeoJson, Geometry, Value as GeoValue};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DropReason, DropRecord, GpsSample, GpsTrack, ManifestRow, MatchRecord, ParcelRecord, VideoMeta};
use crate::geodesy::GeoPoint;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}: no usable records")]
    Empty(PathBuf),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        IngestError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IngestError::Format { path: path.to_path_buf(), message: message.into() }
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        IngestError::parse(path, line, e.to_string())
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let f = File::open(path).map_err(|e| IngestError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn create_csv(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| IngestError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
}

/// Loads a parcel layer. `.geojson`/`.json` files are read as GeoJSON; anything
/// else as CSV with `lat`/`lon` columns. Object ids are assigned 1..n in file order.
pub fn read_parcels(path: &Path, key_field: Option<&str>) -> Result<Vec<ParcelRecord>, IngestError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let parcels = if ext == "geojson" || ext == "json" {
        read_parcels_geojson(path, key_field)?
    } else {
        read_parcels_csv(path, key_field)?
    };
    if parcels.is_empty() {
        return Err(IngestError::Empty(path.to_path_buf()));
    }
    Ok(parcels)
}

fn read_parcels_csv(path: &Path, key_field: Option<&str>) -> Result<Vec<ParcelRecord>, IngestError> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| IngestError::csv(path, e))?.clone();
    let lat_col = column(&headers, &["lat", "latitude"])
        .ok_or_else(|| IngestError::format(path, "missing lat column"))?;
    let lon_col = column(&headers, &["lon", "lng", "longitude"])
        .ok_or_else(|| IngestError::format(path, "missing lon column"))?;
    let key_col = key_field.and_then(|k| column(&headers, &[k]));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::csv(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |c: usize| -> Result<f64, IngestError> {
            rec.get(c)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| IngestError::parse(path, line, format!("bad number in column {:?}", &headers[c])))
        };
        let centroid = GeoPoint::new(num(lat_col)?, num(lon_col)?)
            .map_err(|e| IngestError::parse(path, line, e.to_string()))?;
        let object_id = (i + 1) as u32;
        let source_key = match key_col {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => object_id.to_string(),
        };
        let attributes = headers
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != lat_col && *c != lon_col)
            .map(|(c, h)| (h.to_string(), rec.get(c).unwrap_or("").to_string()))
            .collect();
        out.push(ParcelRecord { object_id, source_key, centroid, attributes });
    }
    Ok(out)
}

fn read_parcels_geojson(path: &Path, key_field: Option<&str>) -> Result<Vec<ParcelRecord>, IngestError> {
    let f = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let gj: GeoJson = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| IngestError::parse(path, e.line() as u64, e.to_string()))?;
    let features = match gj {
        GeoJson::FeatureCollection(fc) => fc.features,
        GeoJson::Feature(f) => vec![f],
        GeoJson::Geometry(_) => return Err(IngestError::format(path, "expected features, found bare geometry")),
    };
    let mut out = Vec::with_capacity(features.len());
    for (i, feat) in features.into_iter().enumerate() {
        let object_id = (i + 1) as u32;
        let geom = feat
            .geometry
            .as_ref()
            .ok_or_else(|| IngestError::format(path, format!("feature {i} has no geometry")))?;
        let (lon, lat) = geometry_centroid(geom)
            .ok_or_else(|| IngestError::format(path, format!("feature {i}: unsupported or empty geometry")))?;
        let centroid = GeoPoint::new(lat, lon)
            .map_err(|e| IngestError::format(path, format!("feature {i}: {e}")))?;
        let attributes: BTreeMap<String, String> = feat
            .properties
            .iter()
            .flatten()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect();
        let source_key = key_field
            .and_then(|k| attributes.get(k).cloned())
            .or_else(|| {
                feat.id.as_ref().map(|id| match id {
                    geojson::feature::Id::String(s) => s.clone(),
                    geojson::feature::Id::Number(n) => n.to_string(),
                })
            })
            .unwrap_or_else(|| object_id.to_string());
        out.push(ParcelRecord { object_id, source_key, centroid, attributes });
    }
    Ok(out)
}

/// Returns `(lon, lat)`. Polygons use the area-weighted centroid of their
/// exterior ring(s) in degree space, which is adequate at parcel scale.
fn geometry_centroid(geom: &Geometry) -> Option<(f64, f64)> {
    match &geom.value {
        GeoValue::Point(p) => Some((p[0], p[1])),
        GeoValue::Polygon(rings) => rings.first().and_then(|r| ring_centroid(r)).map(|(x, y, _)| (x, y)),
        GeoValue::MultiPolygon(polys) => {
            let (mut sx, mut sy, mut sa) = (0.0, 0.0, 0.0);
            for ring in polys.iter().filter_map(|p| p.first()) {
                if let Some((x, y, a)) = ring_centroid(ring) {
                    sx += x * a;
                    sy += y * a;
                    sa += a;
                }
            }
            (sa > 0.0).then(|| (sx / sa, sy / sa))
        }
        _ => None,
    }
}

fn ring_centroid(ring: &[Vec<f64>]) -> Option<(f64, f64, f64)> {
    if ring.len() < 3 {
        return None;
    }
    // Shift to the first vertex to keep the shoelace sums well conditioned.
    let (ox, oy) = (ring[0][0], ring[0][1]);
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for w in ring.windows(2) {
        let (x0, y0) = (w[0][0] - ox, w[0][1] - oy);
        let (x1, y1) = (w[1][0] - ox, w[1][1] - oy);
        let cross = x0 * y1 - x1 * y0;
        a2 += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    if a2.abs() < 1e-18 {
        let n = ring.len() as f64;
        let mx = ring.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = ring.iter().map(|p| p[1]).sum::<f64>() / n;
        return Some((mx, my, 0.0));
    }
    Some((ox + cx / (3.0 * a2), oy + cy / (3.0 * a2), (a2 / 2.0).abs()))
}

/// Derives the base video identifier from a GPS log file name,
/// e.g. `GS010123_gps.csv` -> `GS010123`.
pub fn clean_video_id(file_name: &str) -> String {
    let stem = Path::new(file_name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(file_name);
    let lower = stem.to_ascii_lowercase();
    for suffix in ["_gps", "-gps", ".gps", " gps", "_track", "-track"] {
        if lower.ends_with(suffix) {
            return stem[..stem.len() - suffix.len()].to_string();
        }
    }
    stem.to_string()
}

/// Parses one GPS log. Rows whose coordinates do not parse are returned as
/// `MissingGpsRow` drops; the row position is still consumed as a frame number.
pub fn read_gps_track(path: &Path) -> Result<(GpsTrack, Vec<DropRecord>), IngestError> {
    let video_id = clean_video_id(&path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string());
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| IngestError::csv(path, e))?.clone();
    let lat_col = column(&headers, &["latitude", "lat"])
        .ok_or_else(|| IngestError::format(path, "missing latitude column"))?;
    let lon_col = column(&headers, &["longitude", "lon", "lng"])
        .ok_or_else(|| IngestError::format(path, "missing longitude column"))?;
    let speed_col = column(&headers, &["speed"]);
    let course_col = column(&headers, &["course"]);

    let mut samples = Vec::new();
    let mut drops = Vec::new();
    for (row_index, rec) in rdr.records().enumerate() {
        let row_index = row_index as u64;
        let rec = match rec {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), csv::ErrorKind::UnequalLengths { .. }) => {
                drops.push(DropRecord { video_id: video_id.clone(), frame_number: row_index, reason: DropReason::MissingGpsRow });
                continue;
            }
            Err(e) => return Err(IngestError::csv(path, e)),
        };
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).and_then(|s| s.parse::<f64>().ok());
        let position = match (field(Some(lat_col)), field(Some(lon_col))) {
            (Some(lat), Some(lon)) => GeoPoint::new(lat, lon).ok(),
            _ => None,
        };
        match position {
            Some(position) => samples.push(GpsSample {
                row_index,
                position,
                speed: field(speed_col),
                course: field(course_col),
            }),
            None => drops.push(DropRecord { video_id: video_id.clone(), frame_number: row_index, reason: DropReason::MissingGpsRow }),
        }
    }
    Ok((GpsTrack { video_id, samples }, drops))
}

/// Reads a `video_id,fps,total_frames[,path]` table.
pub fn read_video_meta(path: &Path) -> Result<BTreeMap<String, VideoMeta>, IngestError> {
    let mut rdr = open_csv(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<VideoMeta>() {
        let meta = rec.map_err(|e| IngestError::csv(path, e))?;
        if !(meta.fps.is_finite() && meta.fps > 0.0) {
            return Err(IngestError::format(path, format!("video {:?}: fps must be positive", meta.video_id)));
        }
        out.insert(meta.video_id.clone(), meta);
    }
    Ok(out)
}

/// One row of the matched table; `heading` and `frame_file` are present
/// only in the enriched table written by the rectify stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRow {
    pub object_id: u32,
    pub source_key: String,
    pub video_id: String,
    pub frame_number: u64,
    pub vehicle_lat: f64,
    pub vehicle_lon: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedRow {
    pub object_id: u32,
    pub source_key: String,
    pub video_id: String,
    pub frame_number: u64,
    pub vehicle_lat: f64,
    pub vehicle_lon: f64,
    pub distance_m: f64,
    pub heading: Option<f64>,
    pub frame_file: String,
}

impl MatchedRow {
    pub fn from_match(m: &MatchRecord, source_key: &str) -> Self {
        Self {
            object_id: m.object_id,
            source_key: source_key.to_string(),
            video_id: m.video_id.clone(),
            frame_number: m.frame_number,
            vehicle_lat: m.vehicle_position.lat(),
            vehicle_lon: m.vehicle_position.lon(),
            distance_m: m.distance_m,
        }
    }

    pub fn to_match(&self) -> Result<MatchRecord, crate::geodesy::GeodesyError> {
        Ok(MatchRecord {
            object_id: self.object_id,
            video_id: self.video_id.clone(),
            frame_number: self.frame_number,
            vehicle_position: GeoPoint::new(self.vehicle_lat, self.vehicle_lon)?,
            heading: None,
            distance_m: self.distance_m,
        })
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IngestError> {
    let mut w = create_csv(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| IngestError::csv(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

/// Like [`write_rows`] but writes the header even when `rows` is empty.
pub fn write_rows_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), IngestError> {
    if !rows.is_empty() {
        return write_rows(path, rows);
    }
    let mut w = create_csv(path)?;
    w.write_record(header).map_err(|e| IngestError::csv(path, e))?;
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IngestError> {
    let mut rdr = open_csv(path)?;
    rdr.deserialize().map(|r| r.map_err(|e| IngestError::csv(path, e))).collect()
}

pub const MATCHED_HEADER: [&str; 7] =
    ["object_id", "source_key", "video_id", "frame_number", "vehicle_lat", "vehicle_lon", "distance_m"];
pub const ENRICHED_HEADER: [&str; 9] = [
    "object_id", "source_key", "video_id", "frame_number", "vehicle_lat", "vehicle_lon", "distance_m", "heading",
    "frame_file",
];
pub const MANIFEST_HEADER: [&str; 3] = ["video_id", "timestamp_s", "output_name"];
pub const DROP_HEADER: [&str; 3] = ["video_id", "frame_number", "reason"];

#[derive(Debug, Serialize, Deserialize)]
struct ManifestCsvRow {
    video_id: String,
    timestamp_s: String,
    output_name: String,
}

/// Decimal seconds as written to the manifest and passed to the decoder.
pub fn format_timestamp(t: f64) -> String {
    format!("{t:.6}")
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), IngestError> {
    let rows: Vec<ManifestCsvRow> = rows
        .iter()
        .map(|r| ManifestCsvRow {
            video_id: r.video_id.clone(),
            timestamp_s: format_timestamp(r.timestamp_s),
            output_name: r.output_name.clone(),
        })
        .collect();
    write_rows_with_header(path, &MANIFEST_HEADER, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct DropCsvRow {
    video_id: String,
    frame_number: u64,
    reason: String,
}

pub fn write_drops(path: &Path, drops: &[DropRecord]) -> Result<(), IngestError> {
    let rows: Vec<DropCsvRow> = drops
        .iter()
        .map(|d| DropCsvRow { video_id: d.video_id.clone(), frame_number: d.frame_number, reason: d.reason.to_string() })
        .collect();
    write_rows_with_header(path, &DROP_HEADER, &rows)
}

pub fn read_drops(path: &Path) -> Result<Vec<DropRecord>, IngestError> {
    let rows: Vec<DropCsvRow> = read_rows(path)?;
    rows.into_iter()
        .map(|r| {
            let reason = r.reason.parse().map_err(|m: String| IngestError::format(path, m))?;
            Ok(DropRecord { video_id: r.video_id, frame_number: r.frame_number, reason })
        })
        .collect()
}

/// Writes `bytes` atomically via a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    static SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let seq = SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.{}-{seq}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let mut f = File::create(&tmp).map_err(|e| IngestError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| IngestError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_id_cleaning() {
        assert_eq!(clean_video_id("GS010123_gps.csv"), "GS010123");
        assert_eq!(clean_video_id("GS010123-GPS.csv"), "GS010123");
        assert_eq!(clean_video_id("route7.csv"), "route7");
    }

    #[test]
    fn gps_rows_with_bad_coordinates_become_drops() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vid_gps.csv");
        std::fs::write(
            &p,
            "latitude,longitude,speed,course\n35.1,-82.1,4.0,10\n,,,\nabc,-82.1,1,1\n35.2,-82.2,5.0,\n",
        )
        .unwrap();
        let (track, drops) = read_gps_track(&p).unwrap();
        assert_eq!(track.video_id, "vid");
        assert_eq!(track.samples.iter().map(|s| s.row_index).collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(track.samples[1].course, None);
        assert_eq!(drops.iter().map(|d| d.frame_number).collect::<Vec<_>>(), vec![1, 2]);
        assert!(drops.iter().all(|d| d.reason == DropReason::MissingGpsRow));
    }

    #[test]
    fn gps_header_required() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "35.1,-82.1,4.0,10\n").unwrap();
        assert!(matches!(read_gps_track(&p), Err(IngestError::Format { .. })));
    }

    #[test]
    fn parcels_from_csv_with_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("parcels.csv");
        std::fs::write(&p, "pin,lat,lon,zone\nA1,35.5,-82.5,R1\nA2,35.6,-82.6,R2\n").unwrap();
        let ps = read_parcels(&p, Some("pin")).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].object_id, 2);
        assert_eq!(ps[1].source_key, "A2");
        assert_eq!(ps[0].attributes["zone"], "R1");

        std::fs::write(&p, "lat,lon\n35.5,-82.5\n99,-82.5\n").unwrap();
        match read_parcels(&p, None) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parcels_from_geojson_points_and_polygons() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("parcels.geojson");
        let doc = serde_json::json!({
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "id": "p-1", "properties": {"use": "res", "floors": 2},
                 "geometry": {"type": "Point", "coordinates": [-82.5, 35.5]}},
                {"type": "Feature", "properties": {"pin": "Q"},
                 "geometry": {"type": "Polygon", "coordinates": [[[-82.0, 35.0], [-81.998, 35.0], [-81.998, 35.002], [-82.0, 35.002], [-82.0, 35.0]]]}}
            ]
        });
        std::fs::write(&p, doc.to_string()).unwrap();
        let ps = read_parcels(&p, Some("pin")).unwrap();
        assert_eq!(ps[0].source_key, "p-1");
        assert_eq!(ps[0].attributes["floors"], "2");
        assert_eq!(ps[1].source_key, "Q");
        assert!((ps[1].centroid.lon() + 81.999).abs() < 1e-12);
        assert!((ps[1].centroid.lat() - 35.001).abs() < 1e-12);
    }

    #[test]
    fn empty_parcel_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("parcels.csv");
        std::fs::write(&p, "lat,lon\n").unwrap();
        assert!(matches!(read_parcels(&p, None), Err(IngestError::Empty(_))));
    }
}
