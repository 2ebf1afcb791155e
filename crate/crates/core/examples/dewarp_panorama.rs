//! Renders a synthetic panorama and the facade-centered view for one parcel.
//!
//!     cargo run --example dewarp_panorama -- /tmp/views

use std::path::PathBuf;

use streetview_occupancy::geodesy::bearing_deg;
use streetview_occupancy::rectify::{compute_yaw, dewarp, DewarpParams, DEFAULT_PANO_RATIO};
use streetview_occupancy::synthetic;

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svocc-dewarp"));
    let parcels = synthetic::parcels();
    let target = parcels[3];
    // Eastbound, level with the parcel.
    let pos = streetview_occupancy::geodesy::GeoPoint::new(35.59, target.position.lon()).unwrap();
    let heading = 90.0;

    let pano = synthetic::render_panorama(pos, heading, &parcels);
    let b = bearing_deg(pos, target.position).unwrap().value();
    let yaw = compute_yaw(heading, b, -90.0).unwrap();
    let view = dewarp(&pano, yaw, &DewarpParams { out_width: 640, ..DewarpParams::default() }, DEFAULT_PANO_RATIO).unwrap();

    pano.save(&dir.join("panorama.png")).unwrap();
    view.save(&dir.join("facade.png")).unwrap();
    let c = view.pixel(view.width() / 2, view.height() / 2);
    println!("parcel {} bearing {b:.1} yaw {yaw:.1}", target.object_id);
    println!("center pixel {c:?}, parcel color {:?}", target.color);
    println!("wrote {}", dir.display());
}
