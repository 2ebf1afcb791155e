//! `evaluate`: metrics with paired bootstrap CIs, McNemar tests, error
//! patterns, Moran's I layers and GeoJSON maps.
//!
//! Everything is scored on the common mask: parcels whose ground truth and
//! both strategies are confident in both visits.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::layers::write_layers;
use super::{io_err, Context, LabelBook, ManifestBuilder, PipelineError, Result, RunManifest, VISIT_LABELS_CSV};
use crate::change::{change_class, ChangeClass};
use crate::decision::{OccupancyLabel, Strategy};
use crate::geodesy::{project_conus_albers, GeoPoint, PlanePoint};
use crate::stats::{
    confusion, discordant_counts, knn_weights, mcnemar_auto, metrics, morans_i, morans_i_analytic, paired_bootstrap, BootstrapReport,
    McNemarResult, MetricSet, MoranResult, PairedLabel, StatsError,
};

pub const EVAL_DIR: &str = "evaluate";

/// Labels of one parcel in the common mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedParcel {
    pub object_id: u32,
    pub centroid: GeoPoint,
    /// Indexed by visit (0, 1).
    pub gt: [OccupancyLabel; 2],
    pub one: [OccupancyLabel; 2],
    pub two: [OccupancyLabel; 2],
}

impl MaskedParcel {
    pub fn pair(&self, visit: usize) -> PairedLabel {
        PairedLabel { gt: self.gt[visit], one: self.one[visit], two: self.two[visit] }
    }

    pub fn change(&self, s: Strategy) -> ChangeClass {
        let l = match s {
            Strategy::GroundTruth => self.gt,
            Strategy::OneStage => self.one,
            Strategy::TwoStage => self.two,
        };
        change_class(l[0], l[1])
    }

    /// Visits (of two) where the two-stage label matches ground truth.
    pub fn two_stage_correct(&self) -> usize {
        (0..2).filter(|&v| self.two[v] == self.gt[v]).count()
    }
}

/// Per-parcel accuracy category of the two-stage strategy across both visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyCategory {
    BothCorrect,
    OneCorrect,
    BothWrong,
}

impl AccuracyCategory {
    pub const ALL: [AccuracyCategory; 3] = [AccuracyCategory::BothCorrect, AccuracyCategory::OneCorrect, AccuracyCategory::BothWrong];

    pub fn of(p: &MaskedParcel) -> Self {
        match p.two_stage_correct() {
            2 => AccuracyCategory::BothCorrect,
            1 => AccuracyCategory::OneCorrect,
            _ => AccuracyCategory::BothWrong,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AccuracyCategory::BothCorrect => "both_correct",
            AccuracyCategory::OneCorrect => "one_correct",
            AccuracyCategory::BothWrong => "both_wrong",
        }
    }
}

/// Parcels confident in all three sources for both visits, sorted by id.
pub fn common_mask(ctx: &Context, book: &LabelBook) -> Result<(Vec<MaskedParcel>, usize)> {
    let (v1, v2) = LabelBook::visit_pair(ctx)?;
    let parcels = ctx.parcels()?;
    let mut out = Vec::new();
    for p in &parcels {
        let get = |s| [book.label(&v1, s, p.object_id), book.label(&v2, s, p.object_id)];
        let m = MaskedParcel {
            object_id: p.object_id,
            centroid: p.centroid,
            gt: get(Strategy::GroundTruth),
            one: get(Strategy::OneStage),
            two: get(Strategy::TwoStage),
        };
        if m.gt.iter().chain(&m.one).chain(&m.two).all(|l| l.is_confident()) {
            out.push(m);
        }
    }
    out.sort_by_key(|m| m.object_id);
    Ok((out, parcels.len()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScopeMetrics {
    pub scope: String,
    pub n_parcels: usize,
    pub one_stage: MetricSet,
    pub two_stage: MetricSet,
    /// Absent when the scope has too few parcels to resample.
    pub bootstrap: Option<BootstrapReport>,
    pub mcnemar: McNemarResult,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorPatterns {
    pub both_correct: usize,
    pub both_wrong: usize,
    pub only_one_stage_wrong: usize,
    pub only_two_stage_wrong: usize,
}

impl ErrorPatterns {
    pub fn tally(pairs: &[PairedLabel]) -> Self {
        let mut e = Self::default();
        for p in pairs {
            match (p.one == p.gt, p.two == p.gt) {
                (true, true) => e.both_correct += 1,
                (false, false) => e.both_wrong += 1,
                (false, true) => e.only_one_stage_wrong += 1,
                (true, false) => e.only_two_stage_wrong += 1,
            }
        }
        e
    }

    pub fn total(&self) -> usize {
        self.both_correct + self.both_wrong + self.only_one_stage_wrong + self.only_two_stage_wrong
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MoranRow {
    pub layer: String,
    pub result: Option<MoranResult>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub visits: [String; 2],
    pub seed: u64,
    pub parcels_total: usize,
    pub parcels_masked: usize,
    pub positive_class: &'static str,
    pub scopes: Vec<ScopeMetrics>,
    pub error_patterns: BTreeMap<String, ErrorPatterns>,
    pub accuracy_categories: BTreeMap<String, usize>,
    pub weights: String,
    pub moran: Vec<MoranRow>,
    pub warnings: Vec<String>,
}

fn score_scope(scope: &str, pairs: &[PairedLabel], ctx: &Context, seed: u64, warnings: &mut Vec<String>) -> Result<ScopeMetrics> {
    let gts: Vec<OccupancyLabel> = pairs.iter().map(|p| p.gt).collect();
    let ones: Vec<OccupancyLabel> = pairs.iter().map(|p| p.one).collect();
    let twos: Vec<OccupancyLabel> = pairs.iter().map(|p| p.two).collect();
    let inv = |e: StatsError| PipelineError::Invariant(e.to_string());
    let one_stage = metrics(&confusion(&ones, &gts).map_err(inv)?);
    let two_stage = metrics(&confusion(&twos, &gts).map_err(inv)?);
    let bootstrap = match paired_bootstrap(pairs, ctx.cfg.params.bootstrap_n, seed) {
        Ok(r) => Some(r),
        Err(StatsError::TooFew { need, got }) => {
            let w = format!("{scope}: {got} parcels (< {need}); metrics reported without confidence intervals");
            log::warn!("{w}");
            warnings.push(w);
            None
        }
        Err(e) => return Err(inv(e)),
    };
    let (b, c) = discordant_counts(&gts, &ones, &twos).map_err(inv)?;
    Ok(ScopeMetrics {
        scope: scope.to_string(),
        n_parcels: pairs.len(),
        one_stage,
        two_stage,
        bootstrap,
        mcnemar: mcnemar_auto(b, c, ctx.cfg.params.mcnemar_exact),
    })
}

/// Moran's I (permutation and analytic) for each 0/1 or signed parcel field.
fn moran_layers(masked: &[MaskedParcel], ctx: &Context, seed: u64, warnings: &mut Vec<String>) -> Result<(String, Vec<MoranRow>)> {
    let points: Vec<PlanePoint> =
        masked.iter().map(|m| project_conus_albers(m.centroid)).collect::<std::result::Result<_, _>>().map_err(|e| PipelineError::input(e.to_string()))?;
    let not_occ = |l: OccupancyLabel| (l == OccupancyLabel::NotOccupied) as u8 as f64;
    let fields: Vec<(&str, Vec<f64>)> = vec![
        ("occupancy_v1", masked.iter().map(|m| not_occ(m.gt[0])).collect()),
        ("occupancy_v2", masked.iter().map(|m| not_occ(m.gt[1])).collect()),
        ("gt_change", masked.iter().map(|m| m.change(Strategy::GroundTruth).signed() as f64).collect()),
        ("accuracy_two_stage", masked.iter().map(|m| (m.two_stage_correct() == 2) as u8 as f64).collect()),
    ];
    let w = match knn_weights(&points, ctx.cfg.params.k_neighbors) {
        Ok(w) => w,
        Err(e) => {
            let msg = format!("spatial weights unavailable: {e}");
            warnings.push(msg.clone());
            let rows = fields.iter().map(|(name, _)| MoranRow { layer: name.to_string(), result: None, note: msg.clone() }).collect();
            return Ok((String::new(), rows));
        }
    };
    let mut rows = Vec::new();
    for (name, values) in fields {
        let perm = morans_i(&values, &w, ctx.cfg.params.permutations, seed);
        let analytic = morans_i_analytic(&values, &w);
        for r in [perm, analytic] {
            rows.push(match r {
                Ok(res) => MoranRow { layer: name.to_string(), result: Some(res), note: String::new() },
                Err(e) => {
                    warnings.push(format!("Moran's I for {name}: {e}"));
                    MoranRow { layer: name.to_string(), result: None, note: e.to_string() }
                }
            });
        }
    }
    Ok((w.description().to_string(), rows))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_metrics_csv(path: &Path, scopes: &[ScopeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["scope", "strategy", "metric", "point", "ci_low", "ci_high", "p_value", "n_parcels", "dropped_resamples"])?;
    for s in scopes {
        for m in crate::stats::Metric::ALL {
            let boot = s.bootstrap.as_ref().and_then(|b| b.metrics.get(&m));
            let n = s.n_parcels.to_string();
            for (name, set, res) in
                [("OneStage", &s.one_stage, boot.map(|b| b.one_stage)), ("TwoStage", &s.two_stage, boot.map(|b| b.two_stage))]
            {
                w.write_record([
                    s.scope.as_str(),
                    name,
                    m.as_str(),
                    &opt(set.get(m)),
                    &opt(res.and_then(|r| r.ci_low)),
                    &opt(res.and_then(|r| r.ci_high)),
                    "",
                    &n,
                    &res.map(|r| r.dropped.to_string()).unwrap_or_default(),
                ])?;
            }
            let d = boot.map(|b| b.delta);
            let point = match (s.one_stage.get(m), s.two_stage.get(m)) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            };
            w.write_record([
                s.scope.as_str(),
                "Delta",
                m.as_str(),
                &opt(point),
                &opt(d.and_then(|r| r.ci_low)),
                &opt(d.and_then(|r| r.ci_high)),
                &opt(d.and_then(|r| r.p_value)),
                &n,
                &d.map(|r| r.dropped.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_tests_csv(path: &Path, scopes: &[ScopeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["scope", "test", "statistic", "p_value", "b", "c"])?;
    for s in scopes {
        let m = &s.mcnemar;
        let method = match m.method {
            crate::stats::McNemarMethod::ChiSquaredCorrected => "mcnemar_chi2_corrected",
            crate::stats::McNemarMethod::ExactBinomial => "mcnemar_exact",
        };
        w.write_record([s.scope.clone(), method.into(), m.statistic.to_string(), m.p_value.to_string(), m.b.to_string(), m.c.to_string()])?;
        if let Some(d) = s.bootstrap.as_ref().and_then(|b| b.metrics.get(&crate::stats::Metric::F1)).map(|b| b.delta) {
            w.write_record([s.scope.clone(), "paired_bootstrap_delta_f1".into(), opt(d.point), opt(d.p_value), String::new(), String::new()])?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_error_patterns_csv(path: &Path, patterns: &BTreeMap<String, ErrorPatterns>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["scope", "pattern", "count", "percent"])?;
    for (scope, e) in patterns {
        let total = e.total().max(1) as f64;
        for (name, n) in [
            ("both_correct", e.both_correct),
            ("both_wrong", e.both_wrong),
            ("only_one_stage_wrong", e.only_one_stage_wrong),
            ("only_two_stage_wrong", e.only_two_stage_wrong),
        ] {
            w.write_record([scope.clone(), name.into(), n.to_string(), format!("{:.1}", 100.0 * n as f64 / total)])?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_moran_csv(path: &Path, rows: &[MoranRow], weights: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["layer", "i", "expected_i", "p_value", "method", "z", "permutations", "n", "weights", "note"])?;
    for r in rows {
        match &r.result {
            Some(m) => w.write_record([
                r.layer.clone(),
                m.i.to_string(),
                m.expected_i.to_string(),
                m.p_value.to_string(),
                m.method.as_str().into(),
                opt(m.z),
                m.permutations.map(|p| p.to_string()).unwrap_or_default(),
                m.n.to_string(),
                weights.into(),
                r.note.clone(),
            ])?,
            None => w.write_record([r.layer.as_str(), "", "", "", "", "", "", "", weights, &r.note])?,
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let seed = ctx.seed()?;
    if ctx.cfg.ground_truth.is_none() {
        return Err(PipelineError::input("evaluate needs \"ground_truth\" in the config"));
    }
    let mut mb = ManifestBuilder::new(ctx, "evaluate");
    mb.input(&ctx.cfg.parcels)?;
    let (v1, v2) = LabelBook::visit_pair(ctx)?;
    for v in [&v1, &v2] {
        let p = ctx.visit_dir(v).join(VISIT_LABELS_CSV);
        if p.exists() {
            mb.input(&p)?;
        }
    }
    if let Some(gt) = &ctx.cfg.ground_truth {
        mb.input(gt)?;
    }
    let book = LabelBook::load(ctx)?;
    let (masked, total) = common_mask(ctx, &book)?;
    if masked.is_empty() {
        return Err(PipelineError::input("no parcel has confident labels from all sources in both visits"));
    }
    let mut warnings = Vec::new();

    let mut scopes = Vec::new();
    let mut patterns = BTreeMap::new();
    let mut pooled = Vec::new();
    for (i, v) in [&v1, &v2].into_iter().enumerate() {
        let pairs: Vec<PairedLabel> = masked.iter().map(|m| m.pair(i)).collect();
        scopes.push(score_scope(v, &pairs, ctx, seed, &mut warnings)?);
        patterns.insert(v.clone(), ErrorPatterns::tally(&pairs));
        pooled.extend(pairs);
    }
    scopes.push(score_scope("pooled", &pooled, ctx, seed, &mut warnings)?);
    patterns.insert("pooled".to_string(), ErrorPatterns::tally(&pooled));
    mb.lap("metrics");

    let (weights, moran) = moran_layers(&masked, ctx, seed, &mut warnings)?;
    mb.lap("moran");

    let mut accuracy_categories: BTreeMap<String, usize> = AccuracyCategory::ALL.iter().map(|c| (c.as_str().to_string(), 0)).collect();
    for m in &masked {
        *accuracy_categories.entry(AccuracyCategory::of(m).as_str().to_string()).or_default() += 1;
    }

    let dir = ctx.cfg.out_dir.join(EVAL_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let report = EvaluationReport {
        visits: [v1.clone(), v2.clone()],
        seed,
        parcels_total: total,
        parcels_masked: masked.len(),
        positive_class: "Not Occupied",
        scopes,
        error_patterns: patterns,
        accuracy_categories,
        weights: weights.clone(),
        moran,
        warnings,
    };
    let json = dir.join("metrics.json");
    super::write_json(&json, &report)?;
    let metrics_csv = dir.join("metrics.csv");
    write_metrics_csv(&metrics_csv, &report.scopes)?;
    let tests_csv = dir.join("tests.csv");
    write_tests_csv(&tests_csv, &report.scopes)?;
    let patterns_csv = dir.join("error_patterns.csv");
    write_error_patterns_csv(&patterns_csv, &report.error_patterns)?;
    let moran_csv = dir.join("moran.csv");
    write_moran_csv(&moran_csv, &report.moran, &weights)?;
    for p in [&json, &metrics_csv, &tests_csv, &patterns_csv, &moran_csv] {
        mb.output(p);
    }
    for p in write_layers(&dir.join("layers"), &masked)? {
        mb.output(&p);
    }
    mb.note("parcels_masked", masked.len().to_string());
    mb.note("weights", weights);
    mb.drops("unmasked_parcels", total - masked.len());
    mb.finish()
}
