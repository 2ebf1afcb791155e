//! Change classes, net recovery and the agreement partition for the bundled
//! 240-parcel table.

use std::path::Path;

use streetview_occupancy::change::{agreement_table, read_change_csv, summarize, AgreementCategory};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/change_240");
    let load = |n: &str| read_change_csv(&dir.join(format!("{n}.csv"))).unwrap();
    let (gt, one, two) = (load("ground_truth"), load("one_stage"), load("two_stage"));

    for (name, recs) in [("ground truth", &gt), ("one-stage", &one), ("two-stage", &two)] {
        let s = summarize(recs);
        println!("{name:<13} recovered {:>3} deteriorated {:>3} net {:+}", s.recovered, s.deteriorated, s.net);
    }
    let t = agreement_table(&gt, &one, &two);
    for c in AgreementCategory::ALL {
        let n = t.count(c);
        println!("{:<22} {n:>4} {:>5.1}%", c.as_str(), 100.0 * n as f64 / t.masked as f64);
    }
}
