//! `sweep-tau`: one-stage metrics for each threshold, re-scored from the
//! stored frame attributes (no backend calls).

use std::collections::BTreeMap;

use super::{io_err, Context, LabelBook, ManifestBuilder, PipelineError, Result, RunManifest, FRAME_ATTRIBUTES_CSV};
use crate::decision::{one_stage_label, OccupancyLabel, Strategy, VisitLabelRecord};
use crate::stats::{confusion, metrics, Metric};
use crate::vlm::{AttributeVector, ATTRIBUTE_KEYS};

pub const TAUS: std::ops::RangeInclusive<i32> = 1..=5;

/// Per visit: object_id -> attribute vectors of its parsed frames, plus
/// the number of parse-failed frames (which vote Uncertain).
type FrameAttrs = BTreeMap<u32, (Vec<AttributeVector>, usize)>;

fn read_frame_attributes(path: &std::path::Path) -> Result<FrameAttrs> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| io_err(path, format!("missing column {name}")));
    let (id_col, status_col) = (col("object_id")?, col("status")?);
    let attr_cols: Vec<usize> = ATTRIBUTE_KEYS.iter().map(|k| col(k)).collect::<Result<_>>()?;
    let mut out: FrameAttrs = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u32 = rec[id_col].parse().map_err(|e| io_err(path, e))?;
        let entry = out.entry(id).or_default();
        match &rec[status_col] {
            "Ok" => {
                let mut a = AttributeVector::default();
                for (i, &c) in attr_cols.iter().enumerate() {
                    *a.field_mut(i) = rec[c].parse().map_err(|e| io_err(path, e))?;
                }
                entry.0.push(a);
            }
            "ParseFailure" => entry.1 += 1,
            _ => {}
        }
    }
    Ok(out)
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let mut mb = ManifestBuilder::new(ctx, "sweep-tau");
    if ctx.cfg.ground_truth.is_none() {
        return Err(PipelineError::input("sweep-tau needs \"ground_truth\" in the config"));
    }
    let mut book = LabelBook::default();
    book.insert_all(&super::ground_truth_labels(ctx.cfg.ground_truth.as_ref().expect("checked"))?);
    let mut per_visit = Vec::new();
    for visit in ctx.cfg.visits() {
        let path = ctx.visit_dir(&visit).join(FRAME_ATTRIBUTES_CSV);
        if !path.exists() {
            return Err(PipelineError::MissingVisit(format!("{} (run infer first)", ctx.display_path(&path))));
        }
        mb.input(&path)?;
        per_visit.push((visit, read_frame_attributes(&path)?));
    }

    let path = ctx.cfg.out_dir.join("sweep_tau.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    w.write_record(["tau", "n_parcels", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "kappa", "accuracy"])?;
    for tau in TAUS {
        let (mut preds, mut gts) = (Vec::new(), Vec::new());
        for (visit, frames) in &per_visit {
            for (&id, (attrs, failures)) in frames {
                let mut labels: Vec<OccupancyLabel> = attrs.iter().map(|a| one_stage_label(a, tau)).collect();
                labels.extend(std::iter::repeat_n(OccupancyLabel::Uncertain, *failures));
                let pred = VisitLabelRecord::from_frames(id, visit, Strategy::OneStage, &labels).label;
                let gt = book.label(visit, Strategy::GroundTruth, id);
                if pred.is_confident() && gt.is_confident() {
                    preds.push(pred);
                    gts.push(gt);
                }
            }
        }
        let cm = confusion(&preds, &gts).map_err(|e| PipelineError::Invariant(e.to_string()))?;
        let m = metrics(&cm);
        let mut rec = vec![tau.to_string(), preds.len().to_string(), cm.tp.to_string(), cm.fp.to_string(), cm.fn_.to_string(), cm.tn.to_string()];
        rec.extend(Metric::ALL.iter().map(|&k| m.get(k).map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    mb.output(&path);
    mb.finish()
}
