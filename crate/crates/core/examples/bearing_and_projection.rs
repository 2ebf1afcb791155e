//! Bearing from a vehicle to a building, its CONUS Albers coordinates, and
//! the camera yaw that centers the facade.

use streetview_occupancy::geodesy::{bearing_deg, haversine_m, project_conus_albers, GeoPoint};
use streetview_occupancy::rectify::{compute_yaw, DEFAULT_CALIB_OFFSET_DEG};

fn main() {
    let vehicle = GeoPoint::new(35.5951, -82.5515).unwrap();
    let building = GeoPoint::new(35.5952, -82.5513).unwrap();
    let heading = 85.0;

    let b = bearing_deg(vehicle, building).unwrap().value();
    let p = project_conus_albers(building).unwrap();
    let yaw = compute_yaw(heading, b, DEFAULT_CALIB_OFFSET_DEG).unwrap();
    println!("distance  {:.2} m", haversine_m(vehicle, building));
    println!("bearing   {b:.3} deg");
    println!("albers    x={:.1} y={:.1}", p.x, p.y);
    println!("yaw       {yaw:.3} deg (heading {heading})");
}
