//! `link`: GPS samples to parcels, then the frame-extraction manifest.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{io_err, Context, ManifestBuilder, PipelineError, Result, RunManifest, LINK_DROPS_CSV, MANIFEST_CSV, MATCHED_CSV};
use crate::linkage::ingest::{read_gps_track, read_video_meta, write_drops, write_manifest, write_rows_with_header, MatchedRow, MATCHED_HEADER};
use crate::linkage::{build_frame_manifest, match_track_with, DropRecord, MatchRecord, SpatialIndex};

/// GPS logs in `dir`, sorted by file name.
pub fn gps_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::input(format!("EmptyInput: no GPS CSV files in {}", dir.display())));
    }
    Ok(files)
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let mut mb = ManifestBuilder::new(ctx, "link");
    mb.input(&ctx.cfg.parcels)?;
    let mut per_visit_files = Vec::new();
    for c in &ctx.cfg.campaigns {
        let files = gps_files(&c.gps_dir)?;
        for f in &files {
            mb.input(f)?;
        }
        mb.input(&c.videos)?;
        per_visit_files.push((c, files));
    }
    if ctx.resume && mb.up_to_date() {
        log::info!("link: inputs unchanged, skipping");
        return mb.finish();
    }

    let parcels = ctx.parcels()?;
    let keys: std::collections::HashMap<u32, &str> = parcels.iter().map(|p| (p.object_id, p.source_key.as_str())).collect();
    let index = SpatialIndex::build(&parcels, ctx.cfg.params.buffer_m)?;
    mb.note("parcels", parcels.len().to_string());

    for (campaign, files) in per_visit_files {
        let videos = read_video_meta(&campaign.videos)?;
        let results: Vec<Result<(Vec<MatchRecord>, Vec<DropRecord>, usize)>> = files
            .par_iter()
            .map(|f| {
                let (track, mut drops) = read_gps_track(f)?;
                let tm = match_track_with(&track, &index, ctx.cfg.params.dedup);
                drops.extend(tm.drops);
                Ok((tm.matches, drops, tm.raw_match_count))
            })
            .collect();
        let mut matches = Vec::new();
        let mut drops = Vec::new();
        let mut raw = 0;
        for r in results {
            let (m, d, n) = r?;
            matches.extend(m);
            drops.extend(d);
            raw += n;
        }
        matches.sort_by(|a, b| {
            a.video_id.cmp(&b.video_id).then(a.frame_number.cmp(&b.frame_number)).then(a.object_id.cmp(&b.object_id))
        });
        let (manifest_rows, frame_drops) = build_frame_manifest(&matches, &videos)?;
        drops.extend(frame_drops);
        drops.sort();

        let dir = ctx.visit_dir(&campaign.visit);
        let rows: Vec<MatchedRow> =
            matches.iter().map(|m| MatchedRow::from_match(m, keys.get(&m.object_id).copied().unwrap_or(""))).collect();
        let matched_path = dir.join(MATCHED_CSV);
        write_rows_with_header(&matched_path, &MATCHED_HEADER, &rows)?;
        let manifest_path = dir.join(MANIFEST_CSV);
        write_manifest(&manifest_path, &manifest_rows)?;
        let drops_path = dir.join(LINK_DROPS_CSV);
        write_drops(&drops_path, &drops)?;
        for p in [&matched_path, &manifest_path, &drops_path] {
            mb.output(p);
        }
        for d in &drops {
            mb.drops(format!("{}/{}", campaign.visit, d.reason), 1);
        }
        mb.note(format!("{}/raw_matches", campaign.visit), raw.to_string());
        mb.note(format!("{}/matches", campaign.visit), matches.len().to_string());
        log::info!("link {}: {} matches, {} frames, {} drops", campaign.visit, matches.len(), manifest_rows.len(), drops.len());
        mb.lap(&format!("link_{}", campaign.visit));
    }
    mb.finish()
}
