//! End-to-end runs over the bundled synthetic survey with the recorded backend.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Arc;

use common::{csv_rows, manifest_dir, shared_run, tree_digest};
use streetview_occupancy::pipeline::infer::{configured_backend, run_with_backend, StrategySelection};
use streetview_occupancy::pipeline::{self, Context, Overrides};
use streetview_occupancy::synthetic;
use streetview_occupancy::vlm::{Backend, CountingBackend};

#[test]
fn reruns_are_byte_identical_and_cached_inference_is_free() {
    let (first, _) = shared_run();
    let (_guard, second, ctx) = common::fresh_run();
    let a = tree_digest(&first.root.join("work"));
    let b = tree_digest(&second.root.join("work"));
    assert!(a.len() > 100, "only {} files", a.len());
    assert_eq!(a, b);

    // Same inputs again: every request is answered from the cache.
    let counting = Arc::new(CountingBackend::new(configured_backend(&ctx).unwrap()));
    let backend: Arc<dyn Backend> = counting.clone();
    let outcome = run_with_backend(&ctx, StrategySelection::Both, backend).unwrap();
    assert_eq!(outcome.transport_failures, 0);
    assert_eq!(counting.calls(), 0);
    assert_eq!(outcome.backend_requests, 0);
    assert_eq!(tree_digest(&second.root.join("work")), b);
}

#[test]
fn visit_labels_match_golden_files() {
    let (_, ctx) = shared_run();
    for visit in ["V1", "V2"] {
        let got = std::fs::read_to_string(ctx.visit_dir(visit).join(pipeline::VISIT_LABELS_CSV)).unwrap();
        let want = std::fs::read_to_string(manifest_dir().join(format!("fixtures/golden/visit_labels_{visit}.csv"))).unwrap();
        assert_eq!(got, want, "{visit}");
    }
}

#[test]
fn short_video_yields_one_invalid_frame_index() {
    let (_, ctx) = shared_run();
    let mut total = 0;
    for visit in ["V1", "V2"] {
        let rows = csv_rows(&ctx.visit_dir(visit).join(pipeline::LINK_DROPS_CSV));
        let invalid: Vec<_> = rows.iter().filter(|r| r["reason"] == "InvalidFrameIndex").collect();
        if visit == "V1" {
            assert!(invalid.iter().all(|r| r["video_id"] == synthetic::SHORT_VIDEO));
        }
        total += invalid.len();
    }
    assert_eq!(total, 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ctx.cfg.out_dir.join("manifests/link.json")).unwrap()).unwrap();
    assert_eq!(manifest["drop_counts"]["V1/InvalidFrameIndex"], 1);
}

#[test]
fn flat_frames_pass_through_unchanged() {
    let (_, ctx) = shared_run();
    let rows = csv_rows(&ctx.visit_dir("V2").join(pipeline::ENRICHED_CSV));
    let flat: Vec<_> = rows.iter().filter(|r| r["video_id"] == "GS020003").collect();
    assert!(flat.len() >= 10, "{}", flat.len());
    for r in flat {
        let raw = std::fs::read(ctx.cfg.frames_dir.join("V2").join(&r["frame_file"])).unwrap();
        let out = std::fs::read(ctx.cfg.rectified_dir.join("V2").join(&r["frame_file"])).unwrap();
        assert_eq!(raw, out, "{}", r["frame_file"]);
    }
}

type Labels = BTreeMap<(u32, String, String), String>;

/// (object_id, visit, source) -> label, read straight from the CSV outputs.
fn all_labels(ctx: &Context) -> Labels {
    let mut out = Labels::new();
    for r in csv_rows(ctx.cfg.ground_truth.as_ref().unwrap()) {
        out.insert((r["object_id"].parse().unwrap(), r["visit"].clone(), "GroundTruth".into()), r["label"].clone());
    }
    for visit in ["V1", "V2"] {
        for r in csv_rows(&ctx.visit_dir(visit).join(pipeline::VISIT_LABELS_CSV)) {
            out.insert((r["object_id"].parse().unwrap(), visit.into(), r["strategy"].clone()), r["label"].clone());
        }
    }
    out
}

fn masked_ids(labels: &Labels) -> Vec<u32> {
    let ids: std::collections::BTreeSet<u32> = labels.keys().map(|k| k.0).collect();
    let confident = |l: Option<&String>| matches!(l.map(String::as_str), Some("Occupied" | "NotOccupied"));
    ids.into_iter()
        .filter(|&id| {
            ["V1", "V2"].iter().all(|v| {
                ["GroundTruth", "OneStage", "TwoStage"].iter().all(|s| confident(labels.get(&(id, v.to_string(), s.to_string()))))
            })
        })
        .collect()
}

fn read_layer(ctx: &Context, name: &str) -> Vec<serde_json::Value> {
    let path = ctx.cfg.out_dir.join("evaluate/layers").join(format!("{name}.geojson"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["features"].as_array().unwrap().clone()
}

#[test]
fn layers_cover_exactly_the_common_mask() {
    let (_, ctx) = shared_run();
    let ids = masked_ids(&all_labels(ctx));
    assert!(ids.len() >= 20 && ids.len() < 40, "{}", ids.len());
    for layer in pipeline::layers::LAYER_NAMES {
        let feats = read_layer(ctx, layer);
        assert_eq!(feats.len(), ids.len(), "{layer}");
        let got: Vec<u32> = feats.iter().map(|f| f["properties"]["object_id"].as_u64().unwrap() as u32).collect();
        assert_eq!(got, ids, "{layer}");
        for f in &feats {
            let c = f["geometry"]["coordinates"].as_array().unwrap();
            let (lon, lat) = (c[0].as_f64().unwrap(), c[1].as_f64().unwrap());
            assert!((-83.0..-82.0).contains(&lon) && (35.0..36.0).contains(&lat), "{lon} {lat}");
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ctx.cfg.out_dir.join("evaluate/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["parcels_masked"], ids.len());
}

#[test]
fn accuracy_categories_recomputed_from_labels() {
    let (_, ctx) = shared_run();
    let labels = all_labels(ctx);
    let mut want: BTreeMap<&str, usize> = BTreeMap::new();
    for id in masked_ids(&labels) {
        let correct = ["V1", "V2"]
            .iter()
            .filter(|v| {
                let key = |s: &str| (id, v.to_string(), s.to_string());
                labels[&key("TwoStage")] == labels[&key("GroundTruth")]
            })
            .count();
        *want.entry(["both_wrong", "one_correct", "both_correct"][correct]).or_default() += 1;
    }
    let mut got: BTreeMap<&str, usize> = BTreeMap::new();
    let feats = read_layer(ctx, "accuracy_category");
    for f in &feats {
        let cat = f["properties"]["accuracy_category"].as_str().unwrap();
        let key = ["both_wrong", "one_correct", "both_correct"].into_iter().find(|k| *k == cat).unwrap();
        *got.entry(key).or_default() += 1;
    }
    assert_eq!(got, want);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ctx.cfg.out_dir.join("evaluate/metrics.json")).unwrap()).unwrap();
    for (k, n) in &want {
        assert_eq!(report["accuracy_categories"][k], *n, "{k}");
    }
}

#[test]
fn sweep_reports_every_threshold() {
    let (_, ctx) = shared_run();
    let rows = csv_rows(&ctx.cfg.out_dir.join("sweep_tau.csv"));
    let taus: Vec<&str> = rows.iter().map(|r| r["tau"].as_str()).collect();
    assert_eq!(taus, ["1", "2", "3", "4", "5"]);
    for r in &rows {
        let n: usize = r["n_parcels"].parse().unwrap();
        let sum: usize = ["tp", "fp", "fn", "tn"].iter().map(|k| r[*k].parse::<usize>().unwrap()).sum();
        assert_eq!(n, sum);
    }
}

#[test]
fn empty_gps_directory_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    synthetic::write_inputs(dir.path()).unwrap();
    let gps = dir.path().join("gps/V1");
    std::fs::remove_dir_all(&gps).unwrap();
    std::fs::create_dir_all(&gps).unwrap();
    let ctx = Context::load(&dir.path().join(synthetic::CONFIG_FILE), &Overrides::default()).unwrap();
    let err = pipeline::link::run(&ctx).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

fn svocc(args: &[&str], cwd: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_svocc")).args(args).current_dir(cwd).env("RUST_LOG", "error").output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let missing = svocc(&["--config", "nope.json", "link"], root);
    assert_eq!(missing.status.code(), Some(1));

    synthetic::write_inputs(root).unwrap();
    std::fs::write(root.join(synthetic::RECORDED_FILE), "{}").unwrap();
    for cmd in ["link", "rectify"] {
        let out = svocc(&["--config", synthetic::CONFIG_FILE, cmd], root);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with(cmd));
    }
    // An empty recording answers nothing: every frame is a backend failure.
    let infer = svocc(&["--config", synthetic::CONFIG_FILE, "infer", "--strategy", "one_stage"], root);
    assert_eq!(infer.status.code(), Some(2), "{}", String::from_utf8_lossy(&infer.stderr));
    // Change before any labels exist for V1 is an input error.
    std::fs::remove_file(root.join("work/out/V1").join(pipeline::VISIT_LABELS_CSV)).ok();
    let change = svocc(&["--config", synthetic::CONFIG_FILE, "change"], root);
    assert_eq!(change.status.code(), Some(1));
    let bad = svocc(&["--config", synthetic::CONFIG_FILE, "infer", "--strategy", "three"], root);
    assert_eq!(bad.status.code(), Some(1));
    let help = svocc(&["--help"], root);
    assert_eq!(help.status.code(), Some(0));
}
