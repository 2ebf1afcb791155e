//! One-stage labels across thresholds and visit consolidation.

use streetview_occupancy::decision::{consolidate_visit_audited, one_stage_label, risk_count, OccupancyLabel};
use streetview_occupancy::vlm::AttributeVector;

fn main() {
    let cases = [
        ("clean, car in drive", AttributeVector { site_accessible: true, vehicle_presence: true, ..Default::default() }),
        ("debris and mud", AttributeVector { site_accessible: true, exterior_debris: true, exterior_mud: true, ..Default::default() }),
        ("debris, mud, car", AttributeVector { site_accessible: true, exterior_debris: true, exterior_mud: true, vehicle_presence: true, ..Default::default() }),
        ("blocked, marked", AttributeVector { emergency_markings: true, ..Default::default() }),
    ];
    println!("{:<20} r v  tau=1        tau=2        tau=3", "");
    for (name, a) in &cases {
        let rs = risk_count(a);
        let labels: Vec<String> = (1..=3).map(|t| format!("{:<12}", one_stage_label(a, t).to_string())).collect();
        println!("{name:<20} {} {} {}", rs.r, rs.v, labels.join(" "));
    }

    use OccupancyLabel::*;
    for frames in [vec![Occupied, Occupied, NotOccupied], vec![Occupied, NotOccupied], vec![Occupied, Occupied, Uncertain], vec![Uncertain]] {
        let c = consolidate_visit_audited(&frames).unwrap();
        println!("{frames:?} -> {} (audit: {})", c.label, c.uncertain_override);
    }
}
