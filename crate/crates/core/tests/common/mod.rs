#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use streetview_occupancy::pipeline::infer::StrategySelection;
use streetview_occupancy::pipeline::{self, Context, Overrides};
use streetview_occupancy::synthetic::{self, SyntheticFixture};
use streetview_occupancy::vlm::sha256_hex;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn context(fx: &SyntheticFixture) -> Context {
    Context::load(&fx.config, &Overrides::default()).expect("config loads")
}

/// Every stage, in order, through the library.
pub fn run_all(ctx: &Context) -> pipeline::Result<()> {
    pipeline::link::run(ctx)?;
    pipeline::rectify_stage::run(ctx)?;
    pipeline::infer::run(ctx, StrategySelection::Both)?;
    pipeline::change_stage::run(ctx)?;
    pipeline::evaluate::run(ctx)?;
    pipeline::sweep::run(ctx)?;
    Ok(())
}

/// A fresh fixture with every stage run. The directory lives until the
/// returned guard is dropped.
pub fn fresh_run() -> (tempfile::TempDir, SyntheticFixture, Context) {
    let dir = tempfile::tempdir().unwrap();
    let fx = synthetic::generate(dir.path()).expect("fixture");
    let ctx = context(&fx);
    run_all(&ctx).expect("pipeline");
    (dir, fx, ctx)
}

/// One completed run shared by the tests of a binary.
pub fn shared_run() -> &'static (SyntheticFixture, Context) {
    static RUN: OnceLock<(SyntheticFixture, Context)> = OnceLock::new();
    RUN.get_or_init(|| {
        let (dir, fx, ctx) = fresh_run();
        std::mem::forget(dir);
        (fx, ctx)
    })
}

/// Relative path -> sha256 of every file under `root`.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}
