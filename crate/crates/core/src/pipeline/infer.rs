//! `infer`: one shared vision pass per rectified frame, then the one-stage
//! rule and/or the few-shot decision call, then visit consolidation.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;

use super::{
    io_err, read_visit_labels, write_visit_labels, Context, ManifestBuilder, PipelineError, Result, RunManifest, ENRICHED_CSV,
    FRAME_ATTRIBUTES_CSV, FRAME_LABELS_CSV, RECTIFY_DROPS_CSV, VISIT_LABELS_CSV,
};
use crate::decision::{one_stage_label, OccupancyLabel, Strategy, VisitLabelRecord};
use crate::linkage::ingest::{read_drops, read_rows, EnrichedRow};
use crate::vlm::{
    Backend, CountingBackend, ExtractionResult, ExtractionStatus, HttpBackend, ImageInput, RecordedBackend, ResponseCache, VlmClient,
    VlmError, ATTRIBUTE_KEYS,
};

/// Which label strategies `infer` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategySelection {
    OneStage,
    TwoStage,
    Both,
}

impl StrategySelection {
    pub fn includes(&self, s: Strategy) -> bool {
        matches!(
            (self, s),
            (StrategySelection::Both, Strategy::OneStage | Strategy::TwoStage)
                | (StrategySelection::OneStage, Strategy::OneStage)
                | (StrategySelection::TwoStage, Strategy::TwoStage)
        )
    }
}

impl FromStr for StrategySelection {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "one_stage" | "one" => Ok(StrategySelection::OneStage),
            "two_stage" | "two" => Ok(StrategySelection::TwoStage),
            "both" => Ok(StrategySelection::Both),
            _ => Err(format!("unknown strategy {s:?} (one_stage, two_stage, both)")),
        }
    }
}

/// The configured backend: the recorded fixture when one is set, else HTTP.
pub fn configured_backend(ctx: &Context) -> Result<Arc<dyn Backend>> {
    let b = &ctx.cfg.backend;
    if let Some(fx) = &b.recorded_fixture {
        let rec = RecordedBackend::load(fx).map_err(|e| io_err(fx, e))?;
        return Ok(Arc::new(rec));
    }
    let http = HttpBackend::from_env(&b.endpoint_url, &b.api_key_env_var, Duration::from_secs_f64(b.request_timeout_s))
        .map_err(|e| PipelineError::Backend(e.to_string()))?;
    Ok(Arc::new(http))
}

#[derive(Debug, Clone)]
struct FrameOutput {
    row: EnrichedRow,
    image_sha256: String,
    extraction: ExtractionResult,
    /// `None` when the strategy was not requested or its call failed in transport.
    one_stage: Option<OccupancyLabel>,
    two_stage: Option<OccupancyLabel>,
    decision_hash: String,
    transport_failed: bool,
}

fn process_frame(
    ctx: &Context,
    client: &VlmClient,
    selection: StrategySelection,
    row: EnrichedRow,
    image_path: &Path,
) -> std::result::Result<FrameOutput, VlmError> {
    let image = ImageInput::from_path(image_path).map_err(|e| VlmError::Cache(format!("{}: {e}", image_path.display())))?;
    let image_sha256 = image.sha256();
    let extraction = client.extract_attributes(image)?;
    let mut out = FrameOutput {
        row,
        image_sha256,
        extraction: extraction.clone(),
        one_stage: None,
        two_stage: None,
        decision_hash: String::new(),
        transport_failed: false,
    };
    match (extraction.status, extraction.parsed) {
        (ExtractionStatus::TransportError, _) => out.transport_failed = true,
        (ExtractionStatus::ParseFailure, _) | (_, None) => {
            if selection.includes(Strategy::OneStage) {
                out.one_stage = Some(OccupancyLabel::Uncertain);
            }
            if selection.includes(Strategy::TwoStage) {
                out.two_stage = Some(OccupancyLabel::Uncertain);
            }
        }
        (ExtractionStatus::Ok, Some(attrs)) => {
            if selection.includes(Strategy::OneStage) {
                out.one_stage = Some(one_stage_label(&attrs, ctx.cfg.params.tau));
            }
            if selection.includes(Strategy::TwoStage) {
                match client.decide_two_stage(&attrs) {
                    Ok(d) => {
                        out.two_stage = Some(d.label);
                        out.decision_hash = d.request_hash;
                    }
                    Err(VlmError::Transport { message, .. }) => {
                        log::warn!("decision call failed for {}: {message}", out.row.frame_file);
                        out.transport_failed = true;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

fn bool_cell(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

fn label_cell(l: Option<OccupancyLabel>) -> String {
    l.map(|l| l.to_string()).unwrap_or_default()
}

fn write_frame_tables(dir: &Path, frames: &[FrameOutput]) -> Result<()> {
    let attr_path = dir.join(FRAME_ATTRIBUTES_CSV);
    let mut w = csv::Writer::from_path(&attr_path).map_err(|e| io_err(&attr_path, e))?;
    let mut header = vec!["object_id", "video_id", "frame_number", "frame_file", "image_sha256", "status", "request_hash"];
    header.extend(ATTRIBUTE_KEYS);
    header.push("raw_text");
    w.write_record(&header)?;
    for f in frames {
        let mut rec = vec![
            f.row.object_id.to_string(),
            f.row.video_id.clone(),
            f.row.frame_number.to_string(),
            f.row.frame_file.clone(),
            f.image_sha256.clone(),
            f.extraction.status.as_str().to_string(),
            f.extraction.request_hash.clone(),
        ];
        match &f.extraction.parsed {
            Some(a) => rec.extend(a.values().iter().map(|v| bool_cell(Some(*v)))),
            None => rec.extend(std::iter::repeat_n(String::new(), ATTRIBUTE_KEYS.len())),
        }
        rec.push(f.extraction.raw_text.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(&attr_path, e))?;

    let label_path = dir.join(FRAME_LABELS_CSV);
    let mut w = csv::Writer::from_path(&label_path).map_err(|e| io_err(&label_path, e))?;
    w.write_record(["object_id", "video_id", "frame_number", "frame_file", "one_stage", "two_stage", "decision_hash"])?;
    for f in frames {
        w.write_record([
            f.row.object_id.to_string(),
            f.row.video_id.clone(),
            f.row.frame_number.to_string(),
            f.row.frame_file.clone(),
            label_cell(f.one_stage),
            label_cell(f.two_stage),
            f.decision_hash.clone(),
        ])?;
    }
    w.flush().map_err(|e| io_err(&label_path, e))?;
    Ok(())
}

/// Frames that survived rectification, in enriched-table order.
pub fn usable_frames(ctx: &Context, visit: &str) -> Result<Vec<EnrichedRow>> {
    let dir = ctx.visit_dir(visit);
    let enriched_path = dir.join(ENRICHED_CSV);
    if !enriched_path.exists() {
        return Err(PipelineError::input(format!("{} missing (run rectify first)", ctx.display_path(&enriched_path))));
    }
    let rows: Vec<EnrichedRow> = read_rows(&enriched_path)?;
    let drops_path = dir.join(RECTIFY_DROPS_CSV);
    let dropped: HashSet<(String, u64)> = if drops_path.exists() {
        read_drops(&drops_path)?.into_iter().map(|d| (d.video_id, d.frame_number)).collect()
    } else {
        HashSet::new()
    };
    Ok(rows.into_iter().filter(|r| r.heading.is_some() && !dropped.contains(&(r.video_id.clone(), r.frame_number))).collect())
}

/// Outcome of an `infer` run.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub manifest: RunManifest,
    /// Requests that reached the backend (cache misses).
    pub backend_requests: u64,
    pub transport_failures: usize,
}

pub fn run(ctx: &Context, selection: StrategySelection) -> Result<RunManifest> {
    let outcome = run_with_backend(ctx, selection, configured_backend(ctx)?)?;
    if outcome.transport_failures > 0 {
        return Err(PipelineError::Backend(format!(
            "{} frames failed in transport; partial outputs written, rerun to resume from cache",
            outcome.transport_failures
        )));
    }
    Ok(outcome.manifest)
}

pub fn run_with_backend(ctx: &Context, selection: StrategySelection, backend: Arc<dyn Backend>) -> Result<InferOutcome> {
    let mut mb = ManifestBuilder::new(ctx, "infer");
    let counting = Arc::new(CountingBackend::new(backend));
    let cache_dir = ctx.cfg.backend.cache_dir.clone().unwrap_or_else(|| ctx.cfg.cache_dir.clone());
    let client = VlmClient::new(counting.clone(), ctx.cfg.backend.model_name.clone()).with_cache(ResponseCache::new(cache_dir));
    let threads = ctx.cfg.backend.max_concurrent_requests.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Invariant(e.to_string()))?;
    let mut transport_failures = 0;

    for visit in ctx.cfg.visits() {
        let frames = usable_frames(ctx, &visit)?;
        mb.input(&ctx.visit_dir(&visit).join(ENRICHED_CSV))?;
        let rect_dir = ctx.cfg.rectified_dir.join(&visit);
        for r in &frames {
            let p = rect_dir.join(&r.frame_file);
            if !p.exists() {
                return Err(PipelineError::input(format!("rectified frame {} missing", ctx.display_path(&p))));
            }
        }
        let results: Vec<std::result::Result<FrameOutput, VlmError>> = pool.install(|| {
            frames
                .par_iter()
                .map(|r| process_frame(ctx, &client, selection, r.clone(), &rect_dir.join(&r.frame_file)))
                .collect()
        });
        let outputs: Vec<FrameOutput> = results.into_iter().collect::<std::result::Result<_, _>>()?;

        let dir = ctx.visit_dir(&visit);
        write_frame_tables(&dir, &outputs)?;

        let mut per_parcel: BTreeMap<u32, (Vec<OccupancyLabel>, Vec<OccupancyLabel>)> = BTreeMap::new();
        let mut failures = 0;
        let mut parse_failures = 0;
        for f in &outputs {
            let e = per_parcel.entry(f.row.object_id).or_default();
            e.0.extend(f.one_stage);
            e.1.extend(f.two_stage);
            failures += f.transport_failed as usize;
            parse_failures += (f.extraction.status == ExtractionStatus::ParseFailure) as usize;
        }
        let mut records: Vec<VisitLabelRecord> = Vec::new();
        for (&id, (one, two)) in &per_parcel {
            if selection.includes(Strategy::OneStage) {
                records.push(VisitLabelRecord::from_frames(id, &visit, Strategy::OneStage, one));
            }
            if selection.includes(Strategy::TwoStage) {
                records.push(VisitLabelRecord::from_frames(id, &visit, Strategy::TwoStage, two));
            }
        }
        // Keep labels of strategies not rerun this time.
        let labels_path = dir.join(VISIT_LABELS_CSV);
        if labels_path.exists() {
            records.extend(read_visit_labels(&labels_path)?.into_iter().filter(|r| !selection.includes(r.strategy)));
        }
        records.sort_by(|a, b| a.object_id.cmp(&b.object_id).then(a.strategy.cmp(&b.strategy)));
        write_visit_labels(&labels_path, &records)?;

        for name in [FRAME_ATTRIBUTES_CSV, FRAME_LABELS_CSV, VISIT_LABELS_CSV] {
            mb.output(&dir.join(name));
        }
        mb.drops(format!("{visit}/TransportError"), failures);
        mb.drops(format!("{visit}/ParseFailure"), parse_failures);
        mb.note(format!("{visit}/frames"), outputs.len().to_string());
        mb.note(format!("{visit}/audit"), records.iter().filter(|r| r.audit).count().to_string());
        log::info!("infer {visit}: {} frames, {parse_failures} parse failures, {failures} transport failures", outputs.len());
        transport_failures += failures;
        mb.lap(&format!("infer_{visit}"));
    }
    mb.note("model", ctx.cfg.backend.model_name.clone());
    mb.note("image_encoding", "rectified file bytes as written by rectify, sent as a base64 data URL");
    let manifest = mb.finish()?;
    Ok(InferOutcome { manifest, backend_requests: counting.calls(), transport_failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_parsing() {
        assert_eq!("both".parse::<StrategySelection>().unwrap(), StrategySelection::Both);
        assert_eq!("one_stage".parse::<StrategySelection>().unwrap(), StrategySelection::OneStage);
        assert!("three".parse::<StrategySelection>().is_err());
        assert!(StrategySelection::Both.includes(Strategy::TwoStage));
        assert!(!StrategySelection::OneStage.includes(Strategy::TwoStage));
        assert!(!StrategySelection::Both.includes(Strategy::GroundTruth));
    }
}
