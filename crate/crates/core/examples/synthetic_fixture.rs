//! Writes the bundled synthetic survey (inputs, ground truth, recorded
//! backend and config) to a directory, ready for `svocc --config`.
//!
//!     cargo run --example synthetic_fixture -- /tmp/svocc-demo

use std::path::PathBuf;

use streetview_occupancy::synthetic;

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svocc-demo"));
    let fx = synthetic::generate(&dir).expect("fixture generation");
    println!("fixture at {}", fx.root.display());
    println!("config:   {}", fx.config.display());
    println!("recorded responses: {}", fx.recorded);
}
