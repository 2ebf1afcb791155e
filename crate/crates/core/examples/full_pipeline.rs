//! Generates the synthetic survey and runs every stage on it with the
//! recorded backend, then prints the headline numbers.

use streetview_occupancy::pipeline::infer::StrategySelection;
use streetview_occupancy::pipeline::{self, Context, Overrides};
use streetview_occupancy::synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svocc-full"));
    let fx = synthetic::generate(&dir)?;
    let ctx = Context::load(&fx.config, &Overrides::default())?;

    let manifests = [
        pipeline::link::run(&ctx)?,
        pipeline::rectify_stage::run(&ctx)?,
        pipeline::infer::run(&ctx, StrategySelection::Both)?,
        pipeline::change_stage::run(&ctx)?,
        pipeline::evaluate::run(&ctx)?,
        pipeline::sweep::run(&ctx)?,
    ];
    for m in &manifests {
        let dropped: usize = m.drop_counts.values().sum();
        println!("{:<10} {}  {} outputs, {dropped} dropped", m.command, m.run_id, m.outputs.len());
    }

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ctx.cfg.out_dir.join("evaluate/metrics.json"))?)?;
    println!("masked parcels: {} of {}", report["parcels_masked"], report["parcels_total"]);
    for scope in report["scopes"].as_array().into_iter().flatten() {
        println!(
            "{:<7} accuracy one-stage {:.3} two-stage {:.3}",
            scope["scope"].as_str().unwrap_or("?"),
            scope["one_stage"]["accuracy"].as_f64().unwrap_or(f64::NAN),
            scope["two_stage"]["accuracy"].as_f64().unwrap_or(f64::NAN)
        );
    }
    println!("outputs under {}", ctx.cfg.out_dir.display());
    Ok(())
}

