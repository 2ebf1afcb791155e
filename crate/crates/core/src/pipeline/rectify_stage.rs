//! `rectify`: frame extraction via the external decoder, heading estimation
//! and facade-centered dewarping.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;

use super::link::gps_files;
use super::{io_err, Context, ManifestBuilder, PipelineError, Result, RunManifest, ENRICHED_CSV, MATCHED_CSV, RECTIFY_DROPS_CSV};
use crate::geodesy::{bearing_deg, GeoPoint};
use crate::linkage::ingest::{
    format_timestamp, read_gps_track, read_rows, read_video_meta, write_drops, write_rows_with_header, EnrichedRow, MatchedRow,
    ENRICHED_HEADER,
};
use crate::linkage::{build_frame_manifest, DropReason, DropRecord, GpsTrack, ManifestRow, MatchRecord, VideoMeta};
use crate::rectify::{compute_yaw, dewarp, estimate_heading, is_panoramic, RasterImage, RectifyError};

/// Substitutes shell-quoted `{video}`, `{timestamp}` and `{out}` into `template`.
pub fn decoder_command(template: &str, video: &str, timestamp_s: f64, out: &Path) -> String {
    template
        .replace("{video}", &shell_words::quote(video))
        .replace("{timestamp}", &shell_words::quote(&format_timestamp(timestamp_s)))
        .replace("{out}", &shell_words::quote(&out.to_string_lossy()))
}

fn run_decoder(cmd: &str) -> std::result::Result<(), String> {
    let out = Command::new("sh").arg("-c").arg(cmd).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn video_location(meta: &VideoMeta, video_dir: &Path) -> PathBuf {
    match &meta.path {
        Some(p) if Path::new(p).is_absolute() => PathBuf::from(p),
        Some(p) => video_dir.join(p),
        None => video_dir.join(&meta.video_id),
    }
}

enum FrameOutcome {
    Rectified,
    PassThrough,
    Skipped,
}

/// Dewarps (or copies, for non-panoramic frames) `raw` into `out`.
fn rectify_frame(raw: &Path, out: &Path, yaw: f64, ctx: &Context) -> std::result::Result<FrameOutcome, RectifyError> {
    if ctx.resume && out.exists() {
        return Ok(FrameOutcome::Skipped);
    }
    let img = RasterImage::load(raw)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(image::ImageError::IoError)?;
    }
    if !is_panoramic(img.width(), img.height(), ctx.cfg.params.pano_ratio) {
        std::fs::copy(raw, out).map_err(image::ImageError::IoError)?;
        return Ok(FrameOutcome::PassThrough);
    }
    let view = dewarp(&img, yaw, &ctx.cfg.params.dewarp(), ctx.cfg.params.pano_ratio)?;
    view.save(out)?;
    Ok(FrameOutcome::Rectified)
}

struct RowResult {
    enriched: EnrichedRow,
    drop: Option<DropRecord>,
    outcome: Option<FrameOutcome>,
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let mut mb = ManifestBuilder::new(ctx, "rectify");
    mb.input(&ctx.cfg.parcels)?;
    for c in &ctx.cfg.campaigns {
        let matched = ctx.visit_dir(&c.visit).join(MATCHED_CSV);
        if !matched.exists() {
            return Err(PipelineError::input(format!("{} missing (run link first)", ctx.display_path(&matched))));
        }
        mb.input(&matched)?;
        mb.input(&c.videos)?;
    }
    if ctx.resume && mb.up_to_date() {
        log::info!("rectify: inputs unchanged, skipping");
        return mb.finish();
    }
    let parcels = ctx.parcels()?;
    let centroids: HashMap<u32, GeoPoint> = parcels.iter().map(|p| (p.object_id, p.centroid)).collect();

    for campaign in &ctx.cfg.campaigns {
        let visit = &campaign.visit;
        let dir = ctx.visit_dir(visit);
        let matched_rows: Vec<MatchedRow> = read_rows(&dir.join(MATCHED_CSV))?;
        let matches: Vec<MatchRecord> = matched_rows
            .iter()
            .map(|r| r.to_match().map_err(|e| PipelineError::input(format!("{MATCHED_CSV}: {e}"))))
            .collect::<Result<_>>()?;
        let source_keys: HashMap<(u32, String, u64), String> =
            matched_rows.iter().map(|r| ((r.object_id, r.video_id.clone(), r.frame_number), r.source_key.clone())).collect();
        let videos = read_video_meta(&campaign.videos)?;
        let (manifest, _) = build_frame_manifest(&matches, &videos)?;
        let by_key: HashMap<(u32, &str, u64), &MatchRecord> =
            matches.iter().map(|m| ((m.object_id, m.video_id.as_str(), m.frame_number), m)).collect();

        let mut tracks: BTreeMap<String, GpsTrack> = BTreeMap::new();
        for f in gps_files(&campaign.gps_dir)? {
            let (t, _) = read_gps_track(&f)?;
            tracks.insert(t.video_id.clone(), t);
        }

        let frames_dir = ctx.cfg.frames_dir.join(visit);
        let rect_dir = ctx.cfg.rectified_dir.join(visit);
        std::fs::create_dir_all(&frames_dir).map_err(|e| io_err(&frames_dir, e))?;

        let results: Vec<RowResult> = manifest
            .par_iter()
            .map(|row| {
                let m = by_key[&(row.object_id, row.video_id.as_str(), row.frame_number)];
                process_row(ctx, row, m, &videos, &tracks, &centroids, &frames_dir, &rect_dir, campaign)
            })
            .collect();

        let mut enriched = Vec::with_capacity(results.len());
        let mut drops = Vec::new();
        let (mut rectified, mut passed, mut skipped) = (0, 0, 0);
        for mut r in results {
            r.enriched.source_key =
                source_keys.get(&(r.enriched.object_id, r.enriched.video_id.clone(), r.enriched.frame_number)).cloned().unwrap_or_default();
            match r.outcome {
                Some(FrameOutcome::Rectified) => rectified += 1,
                Some(FrameOutcome::PassThrough) => passed += 1,
                Some(FrameOutcome::Skipped) => skipped += 1,
                None => {}
            }
            drops.extend(r.drop);
            enriched.push(r.enriched);
        }
        drops.sort();
        let enriched_path = dir.join(ENRICHED_CSV);
        write_rows_with_header(&enriched_path, &ENRICHED_HEADER, &enriched)?;
        let drops_path = dir.join(RECTIFY_DROPS_CSV);
        write_drops(&drops_path, &drops)?;
        mb.output(&enriched_path);
        mb.output(&drops_path);
        for d in &drops {
            mb.drops(format!("{visit}/{}", d.reason), 1);
        }
        mb.note(format!("{visit}/rectified"), rectified.to_string());
        mb.note(format!("{visit}/pass_through"), passed.to_string());
        log::info!("rectify {visit}: {rectified} dewarped, {passed} passed through, {skipped} already present, {} dropped", drops.len());
        mb.lap(&format!("rectify_{visit}"));
    }
    mb.note("image_encoding", "JPEG quality 95 (dewarped) or original bytes (pass-through)");
    mb.finish()
}

#[allow(clippy::too_many_arguments)]
fn process_row(
    ctx: &Context,
    row: &ManifestRow,
    m: &MatchRecord,
    videos: &BTreeMap<String, VideoMeta>,
    tracks: &BTreeMap<String, GpsTrack>,
    centroids: &HashMap<u32, GeoPoint>,
    frames_dir: &Path,
    rect_dir: &Path,
    campaign: &super::Campaign,
) -> RowResult {
    let p = &ctx.cfg.params;
    let mut enriched = EnrichedRow {
        object_id: m.object_id,
        source_key: String::new(),
        video_id: m.video_id.clone(),
        frame_number: m.frame_number,
        vehicle_lat: m.vehicle_position.lat(),
        vehicle_lon: m.vehicle_position.lon(),
        distance_m: m.distance_m,
        heading: None,
        frame_file: row.output_name.clone(),
    };
    let drop = |reason| Some(DropRecord { video_id: m.video_id.clone(), frame_number: m.frame_number, reason });

    let heading = match tracks.get(&m.video_id).map(|t| estimate_heading(t, m.frame_number, p.half_window, p.stationary_eps_m)) {
        Some(Ok(h)) => h.heading,
        Some(Err(RectifyError::Stationary { .. })) => return RowResult { enriched, drop: drop(DropReason::Stationary), outcome: None },
        _ => return RowResult { enriched, drop: drop(DropReason::MissingGpsRow), outcome: None },
    };
    enriched.heading = Some(heading);

    let raw = frames_dir.join(&row.output_name);
    if !(ctx.resume && raw.exists()) {
        let video = video_location(&videos[&m.video_id], &campaign.video_dir);
        let cmd = decoder_command(&ctx.cfg.decoder_cmd_template, &video.to_string_lossy(), row.timestamp_s, &raw);
        if let Err(e) = run_decoder(&cmd) {
            log::warn!("decoder failed for {} frame {}: {e}", m.video_id, m.frame_number);
            return RowResult { enriched, drop: drop(DropReason::DewarpSkipped), outcome: None };
        }
    }

    let yaw = centroids
        .get(&m.object_id)
        .ok_or_else(|| format!("parcel {} not in parcel layer", m.object_id))
        .and_then(|c| bearing_deg(m.vehicle_position, *c).map_err(|e| e.to_string()))
        .and_then(|b| compute_yaw(heading, b.value(), p.calib_offset_deg).map_err(|e| e.to_string()));
    let yaw = match yaw {
        Ok(y) => y,
        Err(e) => {
            log::warn!("no yaw for parcel {}: {e}", m.object_id);
            return RowResult { enriched, drop: drop(DropReason::DewarpSkipped), outcome: None };
        }
    };
    match rectify_frame(&raw, &rect_dir.join(&row.output_name), yaw, ctx) {
        Ok(outcome) => RowResult { enriched, drop: None, outcome: Some(outcome) },
        Err(e) => {
            log::warn!("rectify failed for {}: {e}", raw.display());
            RowResult { enriched, drop: drop(DropReason::DewarpSkipped), outcome: None }
        }
    }
}
