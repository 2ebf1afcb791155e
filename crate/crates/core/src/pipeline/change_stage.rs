//! `change`: per-strategy change tables between the first two visits, the
//! agreement partition against ground truth, and net recovery.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{Context, LabelBook, ManifestBuilder, PipelineError, Result, RunManifest, VISIT_LABELS_CSV};
use crate::change::{agreement_table, change_records, summarize, write_agreement_csv, write_change_csv, ChangeRecord, ChangeSummary};
use crate::decision::Strategy;

pub const CHANGE_DIR: &str = "change";
pub const AGREEMENT_CSV: &str = "agreement.csv";
pub const SUMMARY_JSON: &str = "change_summary.json";

pub fn change_csv_name(s: Strategy) -> String {
    format!("change_{s}.csv")
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementSummary {
    pub counts: BTreeMap<String, usize>,
    /// Three-way disagreements, listed for manual review.
    pub audit: usize,
    pub masked: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChangeReport {
    pub visits: [String; 2],
    pub strategies: BTreeMap<String, ChangeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementSummary>,
}

/// Change records for every parcel in the layer, per strategy with labels in both visits.
pub fn strategy_changes(ctx: &Context, book: &LabelBook) -> Result<BTreeMap<Strategy, Vec<ChangeRecord>>> {
    let (v1, v2) = LabelBook::visit_pair(ctx)?;
    let ids: Vec<u32> = {
        let mut v: Vec<u32> = ctx.parcels()?.iter().map(|p| p.object_id).collect();
        v.sort_unstable();
        v
    };
    let mut out = BTreeMap::new();
    for s in Strategy::ALL {
        if let (Some(a), Some(b)) = (book.get(&v1, s), book.get(&v2, s)) {
            out.insert(s, change_records(ids.iter().copied(), a, b));
        }
    }
    Ok(out)
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let mut mb = ManifestBuilder::new(ctx, "change");
    mb.input(&ctx.cfg.parcels)?;
    let (v1, v2) = LabelBook::visit_pair(ctx)?;
    for v in [&v1, &v2] {
        let p = ctx.visit_dir(v).join(VISIT_LABELS_CSV);
        if !p.exists() {
            return Err(PipelineError::MissingVisit(format!("{} (run infer first)", ctx.display_path(&p))));
        }
        mb.input(&p)?;
    }
    if let Some(gt) = &ctx.cfg.ground_truth {
        mb.input(gt)?;
    }
    let book = LabelBook::load(ctx)?;
    let changes = strategy_changes(ctx, &book)?;
    if changes.is_empty() {
        return Err(PipelineError::MissingVisit(format!("no strategy has labels for both {v1} and {v2}")));
    }
    let dir = ctx.cfg.out_dir.join(CHANGE_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| super::io_err(&dir, e))?;

    let mut strategies = BTreeMap::new();
    for (s, recs) in &changes {
        let path = dir.join(change_csv_name(*s));
        write_change_csv(&path, recs)?;
        mb.output(&path);
        let summary = summarize(recs);
        mb.drops(format!("{s}/Excluded"), summary.excluded);
        log::info!(
            "change {s}: {} recovered, {} deteriorated, net {:+}",
            summary.recovered,
            summary.deteriorated,
            summary.net
        );
        strategies.insert(s.to_string(), summary);
    }

    let agreement = match (changes.get(&Strategy::GroundTruth), changes.get(&Strategy::OneStage), changes.get(&Strategy::TwoStage)) {
        (Some(gt), Some(one), Some(two)) => {
            let table = agreement_table(gt, one, two);
            let path = dir.join(AGREEMENT_CSV);
            write_agreement_csv(&path, &table)?;
            mb.output(&path);
            if table.audit > 0 {
                log::warn!("{} parcels with three-way disagreement listed for audit", table.audit);
            }
            Some(AgreementSummary {
                counts: table.counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                audit: table.audit,
                masked: table.masked,
                total: table.total,
            })
        }
        _ => {
            log::info!("agreement partition skipped: needs ground truth and both strategies");
            None
        }
    };

    let report = ChangeReport { visits: [v1, v2], strategies, agreement };
    let path = dir.join(SUMMARY_JSON);
    super::write_json(&path, &report)?;
    mb.output(&path);
    mb.finish()
}
