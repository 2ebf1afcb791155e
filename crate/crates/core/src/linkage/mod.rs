//! Parcel–track linkage.
//!
//! Parcels are projected into the CONUS Albers plane and buffered; every GPS
//! sample is matched to its nearest parcel among the buffered regions that
//! contain it. Matches are deduplicated per `(object_id, video_id)` and turned
//! into a frame-extraction manifest for an external decoder.

pub mod ingest;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::RTree;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{project_conus_albers, GeoPoint, GeodesyError, PlanePoint};

/// Default search radius around each parcel centroid, meters.
pub const DEFAULT_BUFFER_M: f64 = 25.0;

#[derive(Debug, Error)]
pub enum LinkageError {
    #[error("no parcels to index")]
    EmptyInput,
    #[error("invalid buffer radius {0}")]
    InvalidBuffer(f64),
    #[error("frame {frame} is outside the video ({total_frames} frames)")]
    InvalidFrameIndex { frame: u64, total_frames: u64 },
    #[error("fps must be positive, got {0}")]
    InvalidFps(f64),
    #[error("no fps/frame-count metadata for video {0:?}")]
    MissingVideoMetadata(String),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

/// A reference building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelRecord {
    pub object_id: u32,
    pub source_key: String,
    pub centroid: GeoPoint,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    /// Data-row position in the GPS file; doubles as the frame number.
    pub row_index: u64,
    pub position: GeoPoint,
    pub speed: Option<f64>,
    pub course: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrack {
    pub video_id: String,
    /// Valid samples in strictly increasing `row_index` order.
    pub samples: Vec<GpsSample>,
}

/// Frame rate and length of a source video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub fps: f64,
    pub total_frames: u64,
    /// Location handed to the decoder as `{video}`.
    #[serde(default)]
    pub path: Option<String>,
}

impl VideoMeta {
    pub fn duration_s(&self) -> f64 {
        self.total_frames as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub object_id: u32,
    pub video_id: String,
    pub frame_number: u64,
    pub vehicle_position: GeoPoint,
    /// Vehicle heading in degrees, filled in by the rectify stage.
    pub heading: Option<f64>,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    InvalidFrameIndex,
    MissingGpsRow,
    DewarpSkipped,
    Stationary,
    NoCandidate,
}

impl DropReason {
    pub const ALL: [DropReason; 5] = [
        DropReason::InvalidFrameIndex,
        DropReason::MissingGpsRow,
        DropReason::DewarpSkipped,
        DropReason::Stationary,
        DropReason::NoCandidate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::InvalidFrameIndex => "InvalidFrameIndex",
            DropReason::MissingGpsRow => "MissingGpsRow",
            DropReason::DewarpSkipped => "DewarpSkipped",
            DropReason::Stationary => "Stationary",
            DropReason::NoCandidate => "NoCandidate",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DropReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown drop reason {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DropRecord {
    pub video_id: String,
    pub frame_number: u64,
    pub reason: DropReason,
}

/// Which duplicate to keep for a `(object_id, video_id)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// Closest approach; ties go to the earlier frame.
    #[default]
    Nearest,
    First,
    Last,
    /// Keep every per-sample match.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub object_id: u32,
    pub distance_m: f64,
}

type Entry = GeomWithData<Rectangle<[f64; 2]>, usize>;

/// R-tree over the bounding boxes of buffered parcels. Immutable once built.
#[derive(Debug)]
pub struct SpatialIndex {
    buffer_m: f64,
    parcels: Vec<(u32, PlanePoint)>,
    tree: RTree<Entry>,
}

impl SpatialIndex {
    /// Projects and buffers `parcels` and bulk-loads the tree.
    pub fn build(parcels: &[ParcelRecord], buffer_m: f64) -> Result<Self, LinkageError> {
        let planar = parcels
            .iter()
            .map(|p| Ok((p.object_id, project_conus_albers(p.centroid)?)))
            .collect::<Result<Vec<_>, GeodesyError>>()?;
        Self::from_plane(planar, buffer_m)
    }

    /// Builds from parcels already in plane coordinates.
    pub fn from_plane(parcels: Vec<(u32, PlanePoint)>, buffer_m: f64) -> Result<Self, LinkageError> {
        if parcels.is_empty() {
            return Err(LinkageError::EmptyInput);
        }
        if !(buffer_m.is_finite() && buffer_m > 0.0) {
            return Err(LinkageError::InvalidBuffer(buffer_m));
        }
        let entries = parcels
            .iter()
            .enumerate()
            .map(|(i, (_, c))| {
                let rect = Rectangle::from_corners(
                    [c.x - buffer_m, c.y - buffer_m],
                    [c.x + buffer_m, c.y + buffer_m],
                );
                GeomWithData::new(rect, i)
            })
            .collect();
        Ok(Self { buffer_m, parcels, tree: RTree::bulk_load(entries) })
    }

    pub fn buffer_m(&self) -> f64 {
        self.buffer_m
    }

    pub fn len(&self) -> usize {
        self.parcels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parcels.is_empty()
    }

    /// Parcels whose circular buffer contains `p`, sorted by distance then id.
    pub fn candidates(&self, p: PlanePoint) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .tree
            .locate_all_at_point(&[p.x, p.y])
            .filter_map(|e| {
                let (object_id, c) = self.parcels[e.data];
                let d = c.distance(&p);
                (d <= self.buffer_m).then_some(Candidate { object_id, distance_m: d })
            })
            .collect();
        out.sort_by(|a, b| {
            a.distance_m.total_cmp(&b.distance_m).then(a.object_id.cmp(&b.object_id))
        });
        out
    }

    pub fn nearest(&self, p: PlanePoint) -> Option<Candidate> {
        self.candidates(p).into_iter().next()
    }
}

/// Output of [`match_track`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackMatches {
    pub matches: Vec<MatchRecord>,
    pub drops: Vec<DropRecord>,
    /// Per-sample matches before deduplication.
    pub raw_match_count: usize,
}

/// Matches each sample of `track` to its nearest buffered parcel, then
/// deduplicates with the closest-approach rule.
pub fn match_track(track: &GpsTrack, index: &SpatialIndex) -> TrackMatches {
    match_track_with(track, index, DedupPolicy::Nearest)
}

pub fn match_track_with(track: &GpsTrack, index: &SpatialIndex, policy: DedupPolicy) -> TrackMatches {
    let mut raw = Vec::new();
    let mut drops = Vec::new();
    for s in &track.samples {
        let nearest = project_conus_albers(s.position).ok().and_then(|p| index.nearest(p));
        match nearest {
            Some(c) => raw.push(MatchRecord {
                object_id: c.object_id,
                video_id: track.video_id.clone(),
                frame_number: s.row_index,
                vehicle_position: s.position,
                heading: None,
                distance_m: c.distance_m,
            }),
            None => drops.push(DropRecord {
                video_id: track.video_id.clone(),
                frame_number: s.row_index,
                reason: DropReason::NoCandidate,
            }),
        }
    }
    let raw_match_count = raw.len();
    TrackMatches { matches: deduplicate(raw, policy), drops, raw_match_count }
}

/// Collapses matches sharing `(object_id, video_id)` according to `policy`.
/// Output is ordered by `(video_id, frame_number, object_id)`.
pub fn deduplicate(matches: Vec<MatchRecord>, policy: DedupPolicy) -> Vec<MatchRecord> {
    let mut out = if policy == DedupPolicy::Keep {
        matches
    } else {
        let mut best: HashMap<(u32, String), MatchRecord> = HashMap::new();
        for m in matches {
            let key = (m.object_id, m.video_id.clone());
            match best.get(&key) {
                Some(cur) if !replaces(&m, cur, policy) => {}
                _ => {
                    best.insert(key, m);
                }
            }
        }
        best.into_values().collect()
    };
    out.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.frame_number.cmp(&b.frame_number))
            .then(a.object_id.cmp(&b.object_id))
    });
    out
}

fn replaces(new: &MatchRecord, cur: &MatchRecord, policy: DedupPolicy) -> bool {
    match policy {
        DedupPolicy::Nearest => new
            .distance_m
            .total_cmp(&cur.distance_m)
            .then(new.frame_number.cmp(&cur.frame_number))
            .is_lt(),
        DedupPolicy::First => new.frame_number < cur.frame_number,
        DedupPolicy::Last => new.frame_number > cur.frame_number,
        DedupPolicy::Keep => true,
    }
}

/// Seconds into the video for `frame_number`.
pub fn frame_timestamp(frame_number: u64, fps: f64, total_frames: u64) -> Result<f64, LinkageError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(LinkageError::InvalidFps(fps));
    }
    if frame_number >= total_frames {
        return Err(LinkageError::InvalidFrameIndex { frame: frame_number, total_frames });
    }
    Ok(frame_number as f64 / fps)
}

/// One frame to pull out of a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub video_id: String,
    pub timestamp_s: f64,
    pub output_name: String,
    pub object_id: u32,
    pub frame_number: u64,
}

/// File name for the `nth` (0-based) frame of a parcel within one visit:
/// `7.jpg`, then `7_1.jpg`, `7_2.jpg`, ...
pub fn frame_file_name(object_id: u32, nth: usize) -> String {
    if nth == 0 {
        format!("{object_id}.jpg")
    } else {
        format!("{object_id}_{nth}.jpg")
    }
}

/// Builds the decoder manifest. Rows are ordered by `(video_id, timestamp)`;
/// frames past the end of their video become `InvalidFrameIndex` drops.
pub fn build_frame_manifest(
    matches: &[MatchRecord],
    videos: &BTreeMap<String, VideoMeta>,
) -> Result<(Vec<ManifestRow>, Vec<DropRecord>), LinkageError> {
    let mut rows = Vec::with_capacity(matches.len());
    let mut drops = Vec::new();
    for m in matches {
        let meta = videos
            .get(&m.video_id)
            .ok_or_else(|| LinkageError::MissingVideoMetadata(m.video_id.clone()))?;
        match frame_timestamp(m.frame_number, meta.fps, meta.total_frames) {
            Ok(t) => rows.push(ManifestRow {
                video_id: m.video_id.clone(),
                timestamp_s: t,
                output_name: String::new(),
                object_id: m.object_id,
                frame_number: m.frame_number,
            }),
            Err(LinkageError::InvalidFrameIndex { .. }) => drops.push(DropRecord {
                video_id: m.video_id.clone(),
                frame_number: m.frame_number,
                reason: DropReason::InvalidFrameIndex,
            }),
            Err(e) => return Err(e),
        }
    }
    rows.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.timestamp_s.total_cmp(&b.timestamp_s))
            .then(a.object_id.cmp(&b.object_id))
    });
    let mut seen: HashMap<u32, usize> = HashMap::new();
    for row in &mut rows {
        let nth = seen.entry(row.object_id).or_insert(0);
        row.output_name = frame_file_name(row.object_id, *nth);
        *nth += 1;
    }
    Ok((rows, drops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn plane(x: f64, y: f64) -> PlanePoint {
        PlanePoint::new(x, y).unwrap()
    }

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn buffer_boundary() {
        let idx = SpatialIndex::from_plane(vec![(1, plane(0.0, 0.0))], 25.0).unwrap();
        assert_eq!(idx.candidates(plane(0.0, 24.9)).len(), 1);
        assert!(idx.candidates(plane(0.0, 25.1)).is_empty());
        // Inside the bounding box but outside the circle.
        assert!(idx.candidates(plane(20.0, 20.0)).is_empty());
    }

    #[test]
    fn empty_index_rejected() {
        assert!(matches!(SpatialIndex::from_plane(vec![], 25.0), Err(LinkageError::EmptyInput)));
        assert!(matches!(
            SpatialIndex::from_plane(vec![(1, plane(0.0, 0.0))], 0.0),
            Err(LinkageError::InvalidBuffer(_))
        ));
    }

    #[test]
    fn index_equals_brute_force_filter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(500);
        let parcels: Vec<(u32, PlanePoint)> = (1..=500)
            .map(|i| (i, plane(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0))))
            .collect();
        let idx = SpatialIndex::from_plane(parcels.clone(), 25.0).unwrap();
        for _ in 0..2000 {
            let q = plane(rng.gen_range(-30.0..1030.0), rng.gen_range(-30.0..1030.0));
            let mut got: Vec<u32> = idx.candidates(q).iter().map(|c| c.object_id).collect();
            let mut want: Vec<u32> = parcels
                .iter()
                .filter(|(_, c)| c.distance(&q) <= 25.0)
                .map(|(id, _)| *id)
                .collect();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn nearest_wins_and_ties_go_to_lower_id() {
        let idx = SpatialIndex::from_plane(
            vec![(5, plane(0.0, 20.0)), (9, plane(0.0, -10.0))],
            25.0,
        )
        .unwrap();
        assert_eq!(idx.nearest(plane(0.0, 0.0)).unwrap().object_id, 9);
        let tie = SpatialIndex::from_plane(
            vec![(8, plane(10.0, 0.0)), (3, plane(-10.0, 0.0))],
            25.0,
        )
        .unwrap();
        assert_eq!(tie.nearest(plane(0.0, 0.0)).unwrap().object_id, 3);
    }

    #[test]
    fn zero_candidates_drop() {
        let parcel = ParcelRecord {
            object_id: 1,
            source_key: "a".into(),
            centroid: gp(35.6, -82.4),
            attributes: BTreeMap::new(),
        };
        let idx = SpatialIndex::build(&[parcel], 25.0).unwrap();
        let track = GpsTrack {
            video_id: "v".into(),
            samples: vec![GpsSample {
                row_index: 0,
                position: gp(35.61, -82.4),
                speed: None,
                course: None,
            }],
        };
        let out = match_track(&track, &idx);
        assert!(out.matches.is_empty());
        assert_eq!(
            out.drops,
            vec![DropRecord { video_id: "v".into(), frame_number: 0, reason: DropReason::NoCandidate }]
        );
    }

    fn mr(object_id: u32, frame: u64, d: f64) -> MatchRecord {
        MatchRecord {
            object_id,
            video_id: "v".into(),
            frame_number: frame,
            vehicle_position: gp(0.0, 0.0),
            heading: None,
            distance_m: d,
        }
    }

    #[test]
    fn dedup_policies() {
        let ms = vec![mr(1, 0, 12.0), mr(1, 1, 10.0), mr(1, 2, 10.0), mr(1, 3, 11.0), mr(2, 4, 3.0)];
        let near = deduplicate(ms.clone(), DedupPolicy::Nearest);
        assert_eq!(near.iter().map(|m| m.frame_number).collect::<Vec<_>>(), vec![1, 4]);
        let first = deduplicate(ms.clone(), DedupPolicy::First);
        assert_eq!(first.iter().map(|m| m.frame_number).collect::<Vec<_>>(), vec![0, 4]);
        let last = deduplicate(ms.clone(), DedupPolicy::Last);
        assert_eq!(last.iter().map(|m| m.frame_number).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(deduplicate(ms, DedupPolicy::Keep).len(), 5);
    }

    #[test]
    fn timestamps() {
        assert_eq!(frame_timestamp(0, 30.0, 900).unwrap(), 0.0);
        assert_eq!(frame_timestamp(450, 30.0, 900).unwrap(), 15.0);
        assert!(matches!(
            frame_timestamp(1000, 30.0, 900),
            Err(LinkageError::InvalidFrameIndex { frame: 1000, total_frames: 900 })
        ));
        assert!(matches!(frame_timestamp(0, 0.0, 900), Err(LinkageError::InvalidFps(_))));
    }

    fn meta(id: &str, fps: f64, total: u64) -> (String, VideoMeta) {
        (id.to_string(), VideoMeta { video_id: id.into(), fps, total_frames: total, path: None })
    }

    #[test]
    fn manifest_single_row() {
        let mut m = mr(7, 450, 5.0);
        m.video_id = "V".into();
        let videos = BTreeMap::from([meta("V", 30.0, 900)]);
        let (rows, drops) = build_frame_manifest(&[m], &videos).unwrap();
        assert!(drops.is_empty());
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].video_id.as_str(), rows[0].timestamp_s, rows[0].output_name.as_str()), ("V", 15.0, "7.jpg"));
    }

    #[test]
    fn manifest_empty_and_missing_meta() {
        let (rows, drops) = build_frame_manifest(&[], &BTreeMap::new()).unwrap();
        assert!(rows.is_empty() && drops.is_empty());
        assert!(matches!(
            build_frame_manifest(&[mr(1, 0, 1.0)], &BTreeMap::new()),
            Err(LinkageError::MissingVideoMetadata(v)) if v == "v"
        ));
    }

    #[test]
    fn manifest_grouping_and_naming() {
        let mut a = mr(3, 300, 1.0);
        a.video_id = "B".into();
        let mut b = mr(3, 60, 1.0);
        b.video_id = "A".into();
        let mut c = mr(4, 30, 1.0);
        c.video_id = "B".into();
        let mut bad = mr(5, 10_000, 1.0);
        bad.video_id = "A".into();
        let videos = BTreeMap::from([meta("A", 30.0, 900), meta("B", 30.0, 900)]);
        let (rows, drops) = build_frame_manifest(&[a, b, c, bad], &videos).unwrap();
        let got: Vec<(&str, f64, &str)> = rows
            .iter()
            .map(|r| (r.video_id.as_str(), r.timestamp_s, r.output_name.as_str()))
            .collect();
        // Hand enumeration: A first, then B by time; parcel 3's second frame gets a suffix.
        assert_eq!(got, vec![("A", 2.0, "3.jpg"), ("B", 1.0, "4.jpg"), ("B", 10.0, "3_1.jpg")]);
        assert_eq!(drops.len(), 1);
        assert_eq!(drops[0].reason, DropReason::InvalidFrameIndex);
    }

    #[test]
    fn drop_reason_round_trip() {
        for r in DropReason::ALL {
            assert_eq!(r.as_str().parse::<DropReason>().unwrap(), r);
        }
        assert!("Bogus".parse::<DropReason>().is_err());
    }

    fn parcel(object_id: u32, lat: f64, lon: f64) -> ParcelRecord {
        ParcelRecord { object_id, source_key: object_id.to_string(), centroid: gp(lat, lon), attributes: BTreeMap::new() }
    }

    fn track_of(points: &[(f64, f64)]) -> GpsTrack {
        GpsTrack {
            video_id: "v".into(),
            samples: points
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon))| GpsSample { row_index: i as u64, position: gp(lat, lon), speed: None, course: None })
                .collect(),
        }
    }

    #[test]
    fn three_parcels_on_a_straight_street() {
        // Eastbound at ~5 m steps; parcels 100 m apart, 10 m north of samples 20, 40 and 60.
        let (lat0, lon0) = (35.6f64, -82.55);
        let dlon = 5.0 / (111_195.0 * lat0.to_radians().cos());
        let dlat = 10.0 / 111_195.0;
        let pts: Vec<(f64, f64)> = (0..81).map(|i| (lat0, lon0 + i as f64 * dlon)).collect();
        let parcels = [20, 40, 60].map(|k| parcel(k as u32, lat0 + dlat, lon0 + k as f64 * dlon));
        let idx = SpatialIndex::build(&parcels, 25.0).unwrap();
        let out = match_track(&track_of(&pts), &idx);
        let got: Vec<(u32, u64)> = out.matches.iter().map(|m| (m.object_id, m.frame_number)).collect();
        assert_eq!(got, vec![(20, 20), (40, 40), (60, 60)]);
        for m in &out.matches {
            assert!((m.distance_m - 10.0).abs() < 0.2, "{m:?}");
        }
        // Samples within 22.9 m along-track of a parcel are the only matches.
        assert_eq!(out.raw_match_count, 3 * 9);
        assert_eq!(out.drops.len(), 81 - 27);
    }

    #[test]
    fn indexed_matching_equals_brute_force() {
        let start = std::time::Instant::now();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000);
        let (lat0, lon0) = (35.58, -82.56);
        // 200 parcels in a ~500 m square, dense enough that buffers overlap.
        let parcels: Vec<ParcelRecord> = (1..=200)
            .map(|i| parcel(i, lat0 + rng.gen_range(0.0..0.0045), lon0 + rng.gen_range(0.0..0.0055)))
            .collect();
        let pts: Vec<(f64, f64)> =
            (0..1000).map(|_| (lat0 + rng.gen_range(-0.0003..0.0048), lon0 + rng.gen_range(-0.0003..0.0058))).collect();
        let track = track_of(&pts);
        let idx = SpatialIndex::build(&parcels, 25.0).unwrap();
        let got = match_track(&track, &idx);

        let planar: Vec<(u32, PlanePoint)> =
            parcels.iter().map(|p| (p.object_id, project_conus_albers(p.centroid).unwrap())).collect();
        let mut best: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
        let mut no_candidate = 0;
        for s in &track.samples {
            let q = project_conus_albers(s.position).unwrap();
            let mut hit: Option<(f64, u32)> = None;
            for &(id, c) in &planar {
                let d = ((c.x - q.x).powi(2) + (c.y - q.y).powi(2)).sqrt();
                if d <= 25.0 && hit.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                    hit = Some((d, id));
                }
            }
            match hit {
                None => no_candidate += 1,
                Some((d, id)) => {
                    let e = best.entry(id).or_insert((d, s.row_index));
                    if d < e.0 {
                        *e = (d, s.row_index);
                    }
                }
            }
        }
        let mut want: Vec<(u64, u32)> = best.iter().map(|(&id, &(_, f))| (f, id)).collect();
        want.sort_unstable();
        let have: Vec<(u64, u32)> = got.matches.iter().map(|m| (m.frame_number, m.object_id)).collect();
        assert_eq!(have, want);
        assert_eq!(got.drops.len(), no_candidate);
        assert!(!want.is_empty() && no_candidate > 0);
        assert!(start.elapsed().as_secs_f64() < 5.0);
    }
}
