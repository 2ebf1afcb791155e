//! Self-contained survey fixture: 40 parcels on three east-west streets, two
//! campaigns of drive-by panoramas, ground truth, and a recorded backend
//! that answers every request the pipeline will make.
//!
//! Streets A, B, C run 200 m apart; parcels sit every 20 m, 15 m off the
//! centreline, alternating sides. Visit V1 drives each street once. Visit
//! V2 drives A both ways (so A parcels get two frames), B starting from a
//! parked position (one Stationary drop), and skips C. The V2 westbound
//! camera records plain 16:9 frames, which rectify passes through. The V1
//! street C video is shorter than its GPS log, giving one InvalidFrameIndex.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::decision::{risk_count, OccupancyLabel};
use crate::geodesy::{bearing_deg, haversine_m, normalize_pm180, GeoPoint};
use crate::pipeline::infer::usable_frames;
use crate::pipeline::{self, Context, Overrides, PipelineError, Result};
use crate::rectify::RasterImage;
use crate::vlm::{AttributeVector, ImageInput, RecordedBackend, VlmClient};

pub const ORIGIN: (f64, f64) = (35.59, -82.55);
pub const STREETS: [(char, usize); 3] = [('A', 14), ('B', 13), ('C', 13)];
const STREET_GAP_M: f64 = 200.0;
const PARCEL_SPACING_M: f64 = 20.0;
const SETBACK_M: f64 = 15.0;
const STEP_M: f64 = 5.0;
const RUN_IN_M: f64 = 40.0;
const FPS: f64 = 2.0;
const PANO: (u32, u32) = (256, 128);
const FLAT: (u32, u32) = (256, 144);
pub const RECORDED_FILE: &str = "recorded_responses.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SCENARIO_SEED: u64 = 7;

fn meters_to_geo(east: f64, north: f64) -> GeoPoint {
    let lat = ORIGIN.0 + north / 111_195.0;
    let lon = ORIGIN.1 + east / (111_195.0 * ORIGIN.0.to_radians().cos());
    GeoPoint::new(lat, lon).expect("fixture coordinates are valid")
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticParcel {
    pub object_id: u32,
    pub street: char,
    pub position: GeoPoint,
    pub color: [u8; 3],
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [((r + m) * 255.0).round() as u8, ((g + m) * 255.0).round() as u8, ((b + m) * 255.0).round() as u8]
}

/// Parcels in object-id order (the order they appear in the layer).
pub fn parcels() -> Vec<SyntheticParcel> {
    let mut out = Vec::new();
    for (k, &(street, n)) in STREETS.iter().enumerate() {
        for i in 0..n {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let id = out.len() as u32 + 1;
            out.push(SyntheticParcel {
                object_id: id,
                street,
                position: meters_to_geo(PARCEL_SPACING_M * i as f64, k as f64 * STREET_GAP_M + side * SETBACK_M),
                color: hsv((id as f64 * 137.508) % 360.0, 0.85, 0.9),
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub visit: &'static str,
    pub video_id: &'static str,
    pub street: char,
    pub eastbound: bool,
    /// Leading samples parked at the street's first parcel.
    pub parked: usize,
    pub panoramic: bool,
    /// GPS rows whose coordinates are blanked out.
    pub blank_rows: Vec<usize>,
}

pub fn videos() -> Vec<SyntheticVideo> {
    let v = |visit, video_id, street, eastbound| SyntheticVideo {
        visit,
        video_id,
        street,
        eastbound,
        parked: 0,
        panoramic: true,
        blank_rows: vec![],
    };
    vec![
        SyntheticVideo { blank_rows: vec![3], ..v("V1", "GS010001", 'A', true) },
        v("V1", "GS010002", 'B', true),
        v("V1", "GS010003", 'C', true),
        v("V2", "GS020001", 'A', true),
        SyntheticVideo { parked: 20, ..v("V2", "GS020002", 'B', true) },
        SyntheticVideo { panoramic: false, ..v("V2", "GS020003", 'A', false) },
    ]
}

/// The video whose metadata is one frame short of its last parcel match.
pub const SHORT_VIDEO: &str = "GS010003";

fn street_index(street: char) -> usize {
    STREETS.iter().position(|(s, _)| *s == street).expect("known street")
}

/// Vehicle positions, one per GPS row / frame.
pub fn track(video: &SyntheticVideo) -> Vec<GeoPoint> {
    let n = STREETS[street_index(video.street)].1;
    let north = street_index(video.street) as f64 * STREET_GAP_M;
    let end = PARCEL_SPACING_M * (n - 1) as f64 + RUN_IN_M;
    let start = if video.parked > 0 { 0.0 } else { -RUN_IN_M };
    let steps = ((end - start) / STEP_M).round() as usize;
    let mut xs: Vec<f64> = (0..=steps).map(|i| start + i as f64 * STEP_M).collect();
    if !video.eastbound {
        xs.reverse();
    }
    std::iter::repeat_n(xs[0], video.parked).chain(xs).map(|x| meters_to_geo(x, north)).collect()
}

fn heading_at(track: &[GeoPoint], i: usize, eastbound: bool) -> f64 {
    let (a, b) = if i + 1 < track.len() { (track[i], track[i + 1]) } else { (track[i - 1], track[i]) };
    if haversine_m(a, b) < 1e-6 {
        return if eastbound { 90.0 } else { 270.0 };
    }
    bearing_deg(a, b).expect("valid points").value()
}

/// Equirectangular frame: sky, road, and each parcel within 60 m drawn as a
/// facade at panorama longitude `bearing - heading - 90`.
pub fn render_panorama(pos: GeoPoint, heading: f64, parcels: &[SyntheticParcel]) -> RasterImage {
    let (w, h) = PANO;
    let mut img = RasterImage::filled(w, h, [90, 90, 90]).expect("non-empty");
    for y in 0..h / 2 {
        for x in 0..w {
            img.put_pixel(x, y, [170, 200, 230]);
        }
    }
    let mut visible: Vec<(f64, &SyntheticParcel)> =
        parcels.iter().map(|p| (haversine_m(pos, p.position), p)).filter(|(d, _)| *d < 60.0).collect();
    visible.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (d, p) in visible {
        let b = bearing_deg(pos, p.position).expect("valid").value();
        let lon = normalize_pm180(b - heading - 90.0).expect("finite");
        let half = (8.0 / d).atan().to_degrees();
        let (lat_lo, lat_hi) = (-(1.5 / d).atan().to_degrees(), (6.0 / d).atan().to_degrees());
        for x in 0..w {
            let col_lon = (x as f64 + 0.5) / w as f64 * 360.0 - 180.0;
            if normalize_pm180(col_lon - lon).expect("finite").abs() > half {
                continue;
            }
            for y in 0..h {
                let lat = 90.0 - (y as f64 + 0.5) / h as f64 * 180.0;
                if lat >= lat_lo && lat <= lat_hi {
                    img.put_pixel(x, y, p.color);
                }
            }
        }
    }
    img
}

/// Non-panoramic 16:9 frame with the nearest parcel's colour in the middle.
fn render_flat(pos: GeoPoint, parcels: &[SyntheticParcel]) -> RasterImage {
    let (w, h) = FLAT;
    let mut img = RasterImage::filled(w, h, [120, 120, 120]).expect("non-empty");
    if let Some(p) = parcels.iter().min_by(|a, b| haversine_m(pos, a.position).total_cmp(&haversine_m(pos, b.position))) {
        for y in h / 4..3 * h / 4 {
            for x in w / 4..3 * w / 4 {
                img.put_pixel(x, y, p.color);
            }
        }
    }
    img
}

/// Planned labels for one parcel and visit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedVisit {
    pub ground_truth: OccupancyLabel,
    /// What the simulated vision model reports for this parcel.
    pub attributes: AttributeVector,
}

/// The simulated decision model: more conservative than the one-stage
/// rule, calling NotOccupied from one net risk indicator.
pub fn simulated_decision(a: &AttributeVector) -> &'static str {
    let rs = risk_count(a);
    let not_occ = rs.r as i32 - rs.v as i32 >= 1;
    match (not_occ, a.to_bits() % 3) {
        (true, 0) => "Not Occupied",
        (true, 1) => "not occupied.",
        (true, _) => "\"Not Occupied\"",
        (false, 2) => "Occupied.",
        (false, _) => "Occupied",
    }
}

fn attrs_with_margin(rng: &mut ChaCha8Rng, d: i32) -> AttributeVector {
    let v = if d <= 0 { true } else { rng.gen_bool(0.4) };
    let r = (d + v as i32).max(0) as usize;
    let mut risk_slots: Vec<usize> = (0..8).collect();
    for i in (1..8).rev() {
        risk_slots.swap(i, rng.gen_range(0..=i));
    }
    let mut a = AttributeVector { site_accessible: true, vehicle_presence: v, ..Default::default() };
    // Risk slot i maps to attribute index i (slot 4 is "site not accessible").
    for &slot in &risk_slots[..r] {
        if slot == 4 {
            a.site_accessible = false;
        } else {
            *a.field_mut(slot) = true;
        }
    }
    debug_assert_eq!(risk_count(&a).r as i32 - risk_count(&a).v as i32, d);
    a
}

/// Ground truth and simulated model output for every parcel and visit.
pub fn plan() -> BTreeMap<(u32, &'static str), PlannedVisit> {
    use OccupancyLabel::*;
    let mut rng = ChaCha8Rng::seed_from_u64(SCENARIO_SEED);
    let mut out = BTreeMap::new();
    for p in parcels() {
        let gt1 = if rng.gen_bool(0.4) { NotOccupied } else { Occupied };
        let gt2 = match gt1 {
            NotOccupied if rng.gen_bool(0.5) => Occupied,
            Occupied if rng.gen_bool(0.12) => NotOccupied,
            g => g,
        };
        for (visit, gt) in [("V1", gt1), ("V2", gt2)] {
            let u: f64 = rng.gen();
            // Margins: >= 2 both strategies NotOccupied, 1 only two-stage, <= 0 neither.
            let d = match (gt, u) {
                (NotOccupied, u) if u < 0.8 => rng.gen_range(2..=4),
                (NotOccupied, u) if u < 0.9 => 1,
                (NotOccupied, _) => rng.gen_range(-1..=0),
                (_, u) if u < 0.8 => rng.gen_range(-1..=0),
                (_, u) if u < 0.92 => 1,
                _ => rng.gen_range(2..=3),
            };
            out.insert((p.object_id, visit), PlannedVisit { ground_truth: gt, attributes: attrs_with_margin(&mut rng, d) });
        }
    }
    out
}

/// Paths of a generated fixture.
#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub root: PathBuf,
    pub config: PathBuf,
    /// Number of recorded backend responses.
    pub recorded: usize,
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::input(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| io(path, e))
}

/// Writes parcels, GPS logs, video tables, frames, ground truth and config
/// under `root`. The recorded backend is added by [`generate`].
pub fn write_inputs(root: &Path) -> Result<()> {
    let parcels = parcels();
    let features: Vec<serde_json::Value> = parcels
        .iter()
        .map(|p| {
            json!({
                "type": "Feature",
                "id": format!("P{:03}", p.object_id),
                "geometry": {"type": "Point", "coordinates": [p.position.lon(), p.position.lat()]},
                "properties": {"street": p.street.to_string()}
            })
        })
        .collect();
    write(&root.join("parcels.geojson"), &serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features})).expect("json"))?;

    let mut tables: BTreeMap<&str, String> = BTreeMap::new();
    for v in videos() {
        let pts = track(&v);
        let mut gps = String::from("latitude,longitude,speed\n");
        for (i, p) in pts.iter().enumerate() {
            if v.blank_rows.contains(&i) {
                gps.push_str(",,\n");
            } else {
                let speed = if i < v.parked { 0.0 } else { STEP_M * FPS };
                gps.push_str(&format!("{:.9},{:.9},{speed:.1}\n", p.lat(), p.lon()));
            }
        }
        write(&root.join("gps").join(v.visit).join(format!("{}_gps.csv", v.video_id)), &gps)?;

        let frame_dir = root.join("videos").join(v.visit).join(v.video_id);
        std::fs::create_dir_all(&frame_dir).map_err(|e| io(&frame_dir, e))?;
        for (i, p) in pts.iter().enumerate() {
            let img = if v.panoramic {
                render_panorama(*p, heading_at(&pts, i, v.eastbound), &parcels)
            } else {
                render_flat(*p, &parcels)
            };
            let name = format!("{}.jpg", crate::linkage::ingest::format_timestamp(i as f64 / FPS));
            img.save(&frame_dir.join(name)).map_err(|e| io(&frame_dir, e))?;
        }
        let total = if v.video_id == SHORT_VIDEO { short_video_frames(&v, &parcels) } else { pts.len() as u64 };
        tables.entry(v.visit).or_insert_with(|| "video_id,fps,total_frames,path\n".into()).push_str(&format!(
            "{},{FPS},{total},{}\n",
            v.video_id, v.video_id
        ));
    }
    for (visit, t) in &tables {
        write(&root.join("videos").join(format!("{visit}.csv")), t)?;
    }

    let mut gt = String::from("object_id,visit,label\n");
    for ((id, visit), pv) in plan() {
        gt.push_str(&format!("{id},{visit},{}\n", pv.ground_truth));
    }
    write(&root.join("ground_truth.csv"), &gt)?;

    let campaigns: Vec<serde_json::Value> = ["V1", "V2"]
        .iter()
        .map(|v| json!({"visit": v, "gps_dir": format!("gps/{v}"), "videos": format!("videos/{v}.csv"), "video_dir": format!("videos/{v}")}))
        .collect();
    let config = json!({
        "parcels": "parcels.geojson",
        "campaigns": campaigns,
        "frames_dir": "work/frames",
        "rectified_dir": "work/rectified",
        "cache_dir": "work/cache",
        "out_dir": "work/out",
        "ground_truth": "ground_truth.csv",
        "seed": 20240601,
        "params": {"out_width": 320, "bootstrap_n": 2000, "permutations": 199},
        "backend": {"model_name": "gpt-4o", "recorded_fixture": RECORDED_FILE, "max_concurrent_requests": 4},
        "decoder_cmd_template": "cp {video}/{timestamp}.jpg {out}"
    });
    write(&root.join(CONFIG_FILE), &(serde_json::to_string_pretty(&config).expect("json") + "\n"))
}

/// Frame count that leaves the video's last parcel match exactly one frame past the end.
fn short_video_frames(v: &SyntheticVideo, parcels: &[SyntheticParcel]) -> u64 {
    let pts = track(v);
    let last = parcels.iter().filter(|p| p.street == v.street).last().expect("street has parcels");
    // Closest approach to the street's last parcel, earliest on ties.
    let (best, _) = pts
        .iter()
        .enumerate()
        .map(|(i, p)| (i, haversine_m(*p, last.position)))
        .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 - 1e-9 { (i, d) } else { acc });
    best as u64
}

fn vision_response(a: &AttributeVector, style: usize) -> String {
    let body = a.to_canonical_json();
    match style % 5 {
        3 => format!("Here is the assessment:\n```json\n{body}\n```"),
        4 => format!("{body}\nAll attributes are visible from the street."),
        _ => body,
    }
}

/// Frame that returns an unparseable answer: the second V2 frame of the
/// first street-A parcel the one-stage rule calls Occupied.
pub fn garbage_frame(plan: &BTreeMap<(u32, &'static str), PlannedVisit>) -> (u32, String) {
    let id = parcels()
        .iter()
        .filter(|p| p.street == 'A')
        .find(|p| crate::decision::one_stage_label(&plan[&(p.object_id, "V2")].attributes, 2) == OccupancyLabel::Occupied)
        .expect("fixture has an occupied street-A parcel")
        .object_id;
    (id, format!("{id}_1.jpg"))
}

/// Builds the fixture under `root`: inputs, then a scratch link + rectify
/// run to learn the exact image bytes, then the recorded responses.
/// Scratch outputs are removed afterwards.
pub fn generate(root: &Path) -> Result<SyntheticFixture> {
    write_inputs(root)?;
    let config = root.join(CONFIG_FILE);
    // An empty recorded file lets the config load before the real one exists.
    write(&root.join(RECORDED_FILE), "{}\n")?;
    let ctx = Context::load(&config, &Overrides::default())?;
    pipeline::link::run(&ctx)?;
    pipeline::rectify_stage::run(&ctx)?;

    let plan = plan();
    let (garbage_id, garbage_file) = garbage_frame(&plan);
    let client = VlmClient::new(std::sync::Arc::new(RecordedBackend::from_map(BTreeMap::new())), ctx.cfg.backend.model_name.clone());
    let mut responses: BTreeMap<String, String> = BTreeMap::new();
    let mut style = 0;
    for visit in ["V1", "V2"] {
        for row in usable_frames(&ctx, visit)? {
            let path = ctx.cfg.rectified_dir.join(visit).join(&row.frame_file);
            let image = ImageInput::from_path(&path).map_err(|e| io(&path, e))?;
            let req = client.vision_request(image);
            if visit == "V2" && row.object_id == garbage_id && row.frame_file == garbage_file {
                responses.insert(req.hash(), "I am unable to assess this building from the image provided.".into());
                continue;
            }
            let attrs = plan[&(row.object_id, visit)].attributes;
            responses.insert(req.hash(), vision_response(&attrs, style));
            style += 1;
            responses.insert(client.decision_request(&attrs).hash(), simulated_decision(&attrs).into());
        }
    }
    let text = serde_json::to_string_pretty(&responses).expect("json") + "\n";
    write(&root.join(RECORDED_FILE), &text)?;
    let work = root.join("work");
    std::fs::remove_dir_all(&work).map_err(|e| io(&work, e))?;
    Ok(SyntheticFixture { root: root.to_path_buf(), config, recorded: responses.len() })
}
