//! Stage orchestration behind the `svocc` subcommands. Stages talk to each
//! other only through files under the configured directories.

pub mod change_stage;
pub mod config;
pub mod evaluate;
pub mod infer;
pub mod layers;
pub mod link;
pub mod rectify_stage;
pub mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{Campaign, Params, PipelineConfig};

use crate::decision::{OccupancyLabel, Strategy, VisitLabelRecord};
use crate::linkage::ingest::{read_parcels, write_atomic, IngestError};
use crate::linkage::{LinkageError, ParcelRecord};
use crate::vlm::{sha256_hex, VlmError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input error: {0}")]
    Input(String),
    #[error("missing visit labels: {0}")]
    MissingVisit(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    pub fn input(msg: impl Into<String>) -> Self {
        PipelineError::Input(msg.into())
    }

    /// 1 input, 2 backend, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) | PipelineError::MissingVisit(_) => 1,
            PipelineError::Backend(_) => 2,
            PipelineError::Invariant(_) => 3,
        }
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<LinkageError> for PipelineError {
    fn from(e: LinkageError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<VlmError> for PipelineError {
    fn from(e: VlmError) -> Self {
        PipelineError::Backend(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Input(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Input(format!("{}: {e}", path.display()))
}

/// Loaded configuration plus run-wide flags.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: PipelineConfig,
    /// Hash of the configuration before path resolution, so it does not
    /// depend on where the config file lives.
    pub config_hash: String,
    pub base_dir: PathBuf,
    /// Skip stages whose manifest matches the current inputs, and existing frames.
    pub resume: bool,
    /// Record stage timings in run manifests (breaks byte-identical reruns).
    pub record_timings: bool,
}

/// Command-line overrides; set fields win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_concurrent_requests: Option<usize>,
    pub resume: bool,
    pub record_timings: bool,
}

impl Context {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        if let Some(seed) = ov.seed {
            cfg.seed = Some(seed);
        }
        if let Some(n) = ov.max_concurrent_requests {
            cfg.backend.max_concurrent_requests = n;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::from_config(cfg, &base_dir, ov))
            .and_then(|ctx| ctx.cfg.validate().map(|_| ctx))
    }

    /// `cfg` may hold relative paths; they resolve against `base_dir`.
    pub fn from_config(mut cfg: PipelineConfig, base_dir: &Path, ov: &Overrides) -> Self {
        let config_hash = cfg.hash();
        cfg.resolve_paths(base_dir);
        Self { cfg, config_hash, base_dir: base_dir.to_path_buf(), resume: ov.resume, record_timings: ov.record_timings }
    }

    pub fn visit_dir(&self, visit: &str) -> PathBuf {
        self.cfg.out_dir.join(visit)
    }

    pub fn parcels(&self) -> Result<Vec<ParcelRecord>> {
        Ok(read_parcels(&self.cfg.parcels, self.cfg.parcel_key_field.as_deref())?)
    }

    /// Path as recorded in manifests: relative to the config directory when possible.
    pub fn display_path(&self, p: &Path) -> String {
        let rel = p.strip_prefix(&self.base_dir).unwrap_or(p);
        rel.to_string_lossy().replace('\\', "/")
    }

    pub fn seed(&self) -> Result<u64> {
        self.cfg
            .seed
            .ok_or_else(|| PipelineError::input("a seed is required (set \"seed\" in the config or pass --seed)"))
    }
}

pub const MATCHED_CSV: &str = "matched.csv";
pub const MANIFEST_CSV: &str = "frame_manifest.csv";
pub const LINK_DROPS_CSV: &str = "drops_link.csv";
pub const ENRICHED_CSV: &str = "enriched.csv";
pub const RECTIFY_DROPS_CSV: &str = "drops_rectify.csv";
pub const FRAME_ATTRIBUTES_CSV: &str = "frame_attributes.csv";
pub const FRAME_LABELS_CSV: &str = "frame_labels.csv";
pub const VISIT_LABELS_CSV: &str = "visit_labels.csv";

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written by every command under `out_dir/manifests/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub run_id: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub drop_counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_timings_ms: Option<BTreeMap<String, u128>>,
}

pub struct ManifestBuilder<'a> {
    ctx: &'a Context,
    manifest: RunManifest,
    started: Instant,
    timings: BTreeMap<String, u128>,
}

impl<'a> ManifestBuilder<'a> {
    pub fn new(ctx: &'a Context, command: &str) -> Self {
        Self {
            ctx,
            manifest: RunManifest {
                command: command.to_string(),
                run_id: String::new(),
                config_hash: ctx.config_hash.clone(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                drop_counts: BTreeMap::new(),
                notes: BTreeMap::new(),
                stage_timings_ms: None,
            },
            started: Instant::now(),
            timings: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = hash_file(path)?;
        self.manifest.inputs.insert(self.ctx.display_path(path), h);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(self.ctx.display_path(path));
    }

    pub fn drops(&mut self, key: impl Into<String>, n: usize) {
        *self.manifest.drop_counts.entry(key.into()).or_default() += n;
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.manifest.notes.insert(key.into(), value.into());
    }

    pub fn lap(&mut self, stage: &str) {
        self.timings.insert(stage.to_string(), self.started.elapsed().as_millis());
    }

    fn path(ctx: &Context, command: &str) -> PathBuf {
        ctx.cfg.out_dir.join("manifests").join(format!("{command}.json"))
    }

    /// True when a previous manifest for this command saw identical config and inputs
    /// and its outputs still exist.
    pub fn up_to_date(&self) -> bool {
        let path = Self::path(self.ctx, &self.manifest.command);
        let Ok(text) = std::fs::read_to_string(path) else { return false };
        let Ok(prev) = serde_json::from_str::<RunManifest>(&text) else { return false };
        prev.config_hash == self.manifest.config_hash
            && prev.inputs == self.manifest.inputs
            && prev.outputs.iter().all(|o| self.ctx.base_dir.join(o).exists())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        let mut id_src = format!("{}:{}", self.manifest.command, self.manifest.config_hash);
        for (k, v) in &self.manifest.inputs {
            id_src.push_str(k);
            id_src.push_str(v);
        }
        self.manifest.run_id = sha256_hex(id_src.as_bytes())[..16].to_string();
        self.manifest.outputs.sort();
        if self.ctx.record_timings {
            self.lap("total");
            self.manifest.stage_timings_ms = Some(self.timings);
        }
        let path = Self::path(self.ctx, &self.manifest.command);
        write_json(&path, &self.manifest)?;
        log::info!("{}: run {} finished", self.manifest.command, self.manifest.run_id);
        Ok(self.manifest)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Invariant(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct VisitLabelCsvRow {
    object_id: u32,
    visit: String,
    strategy: String,
    label: String,
    n_frames_used: usize,
    excluded: bool,
    audit: bool,
}

pub const VISIT_LABEL_HEADER: [&str; 7] = ["object_id", "visit", "strategy", "label", "n_frames_used", "excluded", "audit"];

pub fn write_visit_labels(path: &Path, records: &[VisitLabelRecord]) -> Result<()> {
    let rows: Vec<VisitLabelCsvRow> = records
        .iter()
        .map(|r| VisitLabelCsvRow {
            object_id: r.object_id,
            visit: r.visit.clone(),
            strategy: r.strategy.to_string(),
            label: r.label.to_string(),
            n_frames_used: r.n_frames_used,
            excluded: r.excluded,
            audit: r.audit,
        })
        .collect();
    Ok(crate::linkage::ingest::write_rows_with_header(path, &VISIT_LABEL_HEADER, &rows)?)
}

pub fn read_visit_labels(path: &Path) -> Result<Vec<VisitLabelRecord>> {
    let rows: Vec<VisitLabelCsvRow> = crate::linkage::ingest::read_rows(path)?;
    rows.into_iter()
        .map(|r| {
            Ok(VisitLabelRecord {
                object_id: r.object_id,
                visit: r.visit,
                strategy: r.strategy.parse().map_err(|e: String| io_err(path, e))?,
                label: r.label.parse().map_err(|e: String| io_err(path, e))?,
                n_frames_used: r.n_frames_used,
                excluded: r.excluded,
                audit: r.audit,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    object_id: u32,
    visit: String,
    label: String,
}

/// Reads `object_id,visit,label` annotations (one row per annotated frame
/// or per visit) and consolidates them with the same rule as predictions.
pub fn ground_truth_labels(path: &Path) -> Result<Vec<VisitLabelRecord>> {
    let rows: Vec<AnnotationRow> = crate::linkage::ingest::read_rows(path)?;
    let mut grouped: BTreeMap<(String, u32), Vec<OccupancyLabel>> = BTreeMap::new();
    for r in rows {
        let label = r.label.parse().map_err(|e: String| io_err(path, e))?;
        grouped.entry((r.visit, r.object_id)).or_default().push(label);
    }
    Ok(grouped
        .into_iter()
        .map(|((visit, id), frames)| VisitLabelRecord::from_frames(id, &visit, Strategy::GroundTruth, &frames))
        .collect())
}

/// Visit labels indexed by `(visit, strategy) -> object_id -> label`.
#[derive(Debug, Clone, Default)]
pub struct LabelBook {
    map: BTreeMap<(String, Strategy), BTreeMap<u32, OccupancyLabel>>,
}

impl LabelBook {
    pub fn insert_all(&mut self, records: &[VisitLabelRecord]) {
        for r in records {
            self.map.entry((r.visit.clone(), r.strategy)).or_default().insert(r.object_id, r.label);
        }
    }

    pub fn get(&self, visit: &str, strategy: Strategy) -> Option<&BTreeMap<u32, OccupancyLabel>> {
        self.map.get(&(visit.to_string(), strategy))
    }

    pub fn label(&self, visit: &str, strategy: Strategy, id: u32) -> OccupancyLabel {
        self.get(visit, strategy).and_then(|m| m.get(&id)).copied().unwrap_or(OccupancyLabel::Uncertain)
    }

    /// Loads predictions from each visit's label table plus ground truth.
    pub fn load(ctx: &Context) -> Result<Self> {
        let mut book = Self::default();
        for visit in ctx.cfg.visits() {
            let path = ctx.visit_dir(&visit).join(VISIT_LABELS_CSV);
            if !path.exists() {
                return Err(PipelineError::MissingVisit(format!("{} (run infer first)", ctx.display_path(&path))));
            }
            book.insert_all(&read_visit_labels(&path)?);
        }
        if let Some(gt) = &ctx.cfg.ground_truth {
            book.insert_all(&ground_truth_labels(gt)?);
        }
        Ok(book)
    }

    /// The first two campaigns, in config order.
    pub fn visit_pair(ctx: &Context) -> Result<(String, String)> {
        let v = ctx.cfg.visits();
        match v.as_slice() {
            [a, b, ..] => Ok((a.clone(), b.clone())),
            _ => Err(PipelineError::MissingVisit("two campaigns are needed for change analysis".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::input("x").exit_code(), 1);
        assert_eq!(PipelineError::MissingVisit("V2".into()).exit_code(), 1);
        assert_eq!(PipelineError::Backend("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Invariant("x".into()).exit_code(), 3);
    }

    #[test]
    fn visit_label_round_trip_and_gt_consolidation() {
        let dir = tempfile::tempdir().unwrap();
        let gt = dir.path().join("gt.csv");
        std::fs::write(&gt, "object_id,visit,label\n1,V1,Occupied\n1,V1,Not Occupied\n2,V1,Occupied\n2,V2,Uncertain\n").unwrap();
        let recs = ground_truth_labels(&gt).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, OccupancyLabel::NotOccupied);
        assert_eq!(recs[2].label, OccupancyLabel::Uncertain);
        assert!(recs[2].excluded);
        let path = dir.path().join("v.csv");
        write_visit_labels(&path, &recs).unwrap();
        assert_eq!(read_visit_labels(&path).unwrap(), recs);
    }
}
