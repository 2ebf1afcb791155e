//! Declarative run configuration (JSON). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::linkage::{DedupPolicy, DEFAULT_BUFFER_M};
use crate::rectify::{DewarpParams, DEFAULT_CALIB_OFFSET_DEG, DEFAULT_HALF_WINDOW, DEFAULT_PANO_RATIO, DEFAULT_STATIONARY_EPS_M};
use crate::stats::bootstrap::DEFAULT_RESAMPLES;
use crate::stats::spatial::{DEFAULT_K, DEFAULT_PERMUTATIONS};
use crate::vlm::{sha256_hex, BackendConfig};

/// One survey campaign: a visit tag plus where its GPS logs and videos live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub visit: String,
    /// Directory of per-video GPS CSV files.
    pub gps_dir: PathBuf,
    /// `video_id,fps,total_frames[,path]` table.
    pub videos: PathBuf,
    /// Base directory for relative video paths (and for videos without one).
    pub video_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub buffer_m: f64,
    pub dedup: DedupPolicy,
    pub half_window: usize,
    pub calib_offset_deg: f64,
    pub hfov_deg: f64,
    pub out_width: u32,
    pub aspect_w: u32,
    pub aspect_h: u32,
    pub tau: i32,
    pub pano_ratio: f64,
    pub stationary_eps_m: f64,
    pub k_neighbors: usize,
    pub bootstrap_n: usize,
    pub permutations: usize,
    /// Use the exact binomial McNemar test when b + c < 25.
    pub mcnemar_exact: bool,
}

impl Default for Params {
    fn default() -> Self {
        let d = DewarpParams::default();
        Self {
            buffer_m: DEFAULT_BUFFER_M,
            dedup: DedupPolicy::Nearest,
            half_window: DEFAULT_HALF_WINDOW,
            calib_offset_deg: DEFAULT_CALIB_OFFSET_DEG,
            hfov_deg: d.hfov_deg,
            out_width: d.out_width,
            aspect_w: d.aspect_w,
            aspect_h: d.aspect_h,
            tau: crate::decision::DEFAULT_TAU,
            pano_ratio: DEFAULT_PANO_RATIO,
            stationary_eps_m: DEFAULT_STATIONARY_EPS_M,
            k_neighbors: DEFAULT_K,
            bootstrap_n: DEFAULT_RESAMPLES,
            permutations: DEFAULT_PERMUTATIONS,
            mcnemar_exact: false,
        }
    }
}

impl Params {
    pub fn dewarp(&self) -> DewarpParams {
        DewarpParams { hfov_deg: self.hfov_deg, out_width: self.out_width, aspect_w: self.aspect_w, aspect_h: self.aspect_h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub parcels: PathBuf,
    /// Parcel attribute used as `source_key`; defaults to the feature id / row number.
    #[serde(default)]
    pub parcel_key_field: Option<String>,
    pub campaigns: Vec<Campaign>,
    pub frames_dir: PathBuf,
    pub rectified_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Frame- or visit-level annotations: `object_id,visit,label`.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub backend: BackendConfig,
    /// Shell command with `{video}`, `{timestamp}` and `{out}` placeholders.
    pub decoder_cmd_template: String,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::input(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::input(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.parcels);
        fix(&mut self.frames_dir);
        fix(&mut self.rectified_dir);
        fix(&mut self.cache_dir);
        fix(&mut self.out_dir);
        if let Some(gt) = &mut self.ground_truth {
            fix(gt);
        }
        if let Some(fx) = &mut self.backend.recorded_fixture {
            fix(fx);
        }
        if let Some(dir) = &mut self.backend.cache_dir {
            fix(dir);
        }
        for c in &mut self.campaigns {
            fix(&mut c.gps_dir);
            fix(&mut c.videos);
            fix(&mut c.video_dir);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.campaigns.is_empty() {
            return Err(PipelineError::input("config lists no campaigns"));
        }
        let mut visits: Vec<&str> = self.campaigns.iter().map(|c| c.visit.as_str()).collect();
        visits.sort();
        visits.dedup();
        if visits.len() != self.campaigns.len() {
            return Err(PipelineError::input("duplicate visit tags in campaigns"));
        }
        if self.campaigns.iter().any(|c| c.visit.is_empty() || c.visit.contains(['/', '\\'])) {
            return Err(PipelineError::input("visit tags must be non-empty plain names"));
        }
        if !(self.params.buffer_m > 0.0) || self.params.half_window == 0 || self.params.bootstrap_n == 0 {
            return Err(PipelineError::input("buffer_m, half_window and bootstrap_n must be positive"));
        }
        Ok(())
    }

    pub fn visits(&self) -> Vec<String> {
        self.campaigns.iter().map(|c| c.visit.clone()).collect()
    }

    pub fn campaign(&self, visit: &str) -> Option<&Campaign> {
        self.campaigns.iter().find(|c| c.visit == visit)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
