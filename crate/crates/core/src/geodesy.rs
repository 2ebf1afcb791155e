//! Coordinate math: great-circle bearing, angle normalization and the
//! CONUS Albers equal-area conic projection used for every metric operation.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius used for haversine distances, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Tolerance under which two geographic points count as identical (degrees).
const IDENTICAL_EPS_DEG: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("bearing between identical points is undefined")]
    IdenticalPoints,
    #[error("point ({lat}, {lon}) is outside the projection domain")]
    OutOfDomain { lat: f64, lon: f64 },
}

/// Geographic position in decimal degrees (WGS84 / NAD83, treated as identical).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeodesyError> {
        if !lat.is_finite() {
            return Err(GeodesyError::NonFinite(lat));
        }
        if !lon.is_finite() {
            return Err(GeodesyError::NonFinite(lon));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeodesyError::InvalidLatitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeodesyError::InvalidLongitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Projected plane coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self, GeodesyError> {
        if !x.is_finite() {
            return Err(GeodesyError::NonFinite(x));
        }
        if !y.is_finite() {
            return Err(GeodesyError::NonFinite(y));
        }
        Ok(Self { x, y })
    }

    pub fn distance(&self, other: &PlanePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Compass bearing in degrees clockwise from north, in `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BearingDeg(f64);

impl BearingDeg {
    pub fn new(angle: f64) -> Result<Self, GeodesyError> {
        normalize_0_360(angle).map(BearingDeg)
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_0_360(angle: f64) -> Result<f64, GeodesyError> {
    if !angle.is_finite() {
        return Err(GeodesyError::NonFinite(angle));
    }
    let r = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    Ok(if r >= 360.0 { 0.0 } else { r })
}

/// Wraps an angle into `(-180, 180]`; the boundary maps to `+180`.
pub fn normalize_pm180(angle: f64) -> Result<f64, GeodesyError> {
    let r = normalize_0_360(angle)?;
    Ok(if r > 180.0 { r - 360.0 } else { r })
}

/// Initial great-circle bearing from `from` to `to` on a sphere.
pub fn bearing_deg(from: GeoPoint, to: GeoPoint) -> Result<BearingDeg, GeodesyError> {
    if (from.lat - to.lat).abs() < IDENTICAL_EPS_DEG && (from.lon - to.lon).abs() < IDENTICAL_EPS_DEG
    {
        return Err(GeodesyError::IdenticalPoints);
    }
    let lat1 = from.lat.to_radians();
    let lat2 = to.lat.to_radians();
    let dlon = (to.lon - from.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    BearingDeg::new(y.atan2(x).to_degrees())
}

/// Haversine great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

// EPSG:5070 "NAD83 / Conus Albers": Albers equal-area conic on GRS80.
const GRS80_A: f64 = 6_378_137.0;
const GRS80_INV_F: f64 = 298.257_222_101;
const STD_PARALLEL_1: f64 = 29.5;
const STD_PARALLEL_2: f64 = 45.5;
const LAT_ORIGIN: f64 = 23.0;
const CENTRAL_MERIDIAN: f64 = -96.0;
const FALSE_EASTING: f64 = 0.0;
const FALSE_NORTHING: f64 = 0.0;

struct AlbersConstants {
    e: f64,
    e2: f64,
    n: f64,
    c: f64,
    rho0: f64,
}

fn albers() -> &'static AlbersConstants {
    use std::sync::OnceLock;
    static CONSTS: OnceLock<AlbersConstants> = OnceLock::new();
    CONSTS.get_or_init(|| {
        let f = 1.0 / GRS80_INV_F;
        let e2 = f * (2.0 - f);
        let e = e2.sqrt();
        let m = |phi: f64| phi.cos() / (1.0 - e2 * phi.sin().powi(2)).sqrt();
        let phi1 = STD_PARALLEL_1.to_radians();
        let phi2 = STD_PARALLEL_2.to_radians();
        let (m1, m2) = (m(phi1), m(phi2));
        let (q1, q2) = (albers_q(phi1, e, e2), albers_q(phi2, e, e2));
        let q0 = albers_q(LAT_ORIGIN.to_radians(), e, e2);
        let n = (m1 * m1 - m2 * m2) / (q2 - q1);
        let c = m1 * m1 + n * q1;
        let rho0 = GRS80_A * (c - n * q0).sqrt() / n;
        AlbersConstants { e, e2, n, c, rho0 }
    })
}

fn albers_q(phi: f64, e: f64, e2: f64) -> f64 {
    let s = phi.sin();
    (1.0 - e2) * (s / (1.0 - e2 * s * s) - (1.0 / (2.0 * e)) * ((1.0 - e * s) / (1.0 + e * s)).ln())
}

fn check_conus(lat: f64, lon: f64) -> Result<(), GeodesyError> {
    if (lat - 37.0).abs() > 40.0 || (lon + 96.0).abs() > 60.0 {
        return Err(GeodesyError::OutOfDomain { lat, lon });
    }
    Ok(())
}

/// Forward CONUS Albers projection (EPSG:5070), meters.
pub fn project_conus_albers(p: GeoPoint) -> Result<PlanePoint, GeodesyError> {
    check_conus(p.lat, p.lon)?;
    let k = albers();
    let q = albers_q(p.lat.to_radians(), k.e, k.e2);
    let rho = GRS80_A * (k.c - k.n * q).sqrt() / k.n;
    let theta = k.n * (p.lon - CENTRAL_MERIDIAN).to_radians();
    PlanePoint::new(
        FALSE_EASTING + rho * theta.sin(),
        FALSE_NORTHING + k.rho0 - rho * theta.cos(),
    )
}

/// Inverse CONUS Albers projection.
pub fn unproject_conus_albers(p: PlanePoint) -> Result<GeoPoint, GeodesyError> {
    let k = albers();
    let x = p.x - FALSE_EASTING;
    let dy = k.rho0 - (p.y - FALSE_NORTHING);
    let rho = x.hypot(dy);
    let q = (k.c - rho * rho * k.n * k.n / (GRS80_A * GRS80_A)) / k.n;
    let theta = x.atan2(dy);
    let lon = CENTRAL_MERIDIAN + (theta / k.n).to_degrees();

    // Fixed-point iteration for latitude from the authalic function q.
    let mut phi = (q / 2.0).clamp(-1.0, 1.0).asin();
    for _ in 0..32 {
        let s = phi.sin();
        let one_minus = 1.0 - k.e2 * s * s;
        let delta = one_minus * one_minus / (2.0 * phi.cos())
            * (q / (1.0 - k.e2) - s / one_minus
                + (1.0 / (2.0 * k.e)) * ((1.0 - k.e * s) / (1.0 + k.e * s)).ln());
        phi += delta;
        if delta.abs() < 1e-15 {
            break;
        }
    }
    let lat = phi.to_degrees();
    check_conus(lat, lon)?;
    GeoPoint::new(lat, lon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn cardinal_bearings() {
        assert_abs_diff_eq!(bearing_deg(gp(0.0, 0.0), gp(1.0, 0.0)).unwrap().value(), 0.0);
        assert_abs_diff_eq!(
            bearing_deg(gp(0.0, 0.0), gp(0.0, 1.0)).unwrap().value(),
            90.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bearing_deg(gp(10.0, 10.0), gp(9.0, 10.0)).unwrap().value(),
            180.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bearing_matches_high_precision_reference() {
        // 40-digit evaluation of the same formula with mpmath.
        let b = bearing_deg(gp(35.60, -82.40), gp(35.61, -82.39)).unwrap();
        assert_abs_diff_eq!(b.value(), 39.109_923_225_383_79, epsilon = 1e-9);
    }

    #[test]
    fn identical_points_rejected() {
        assert_eq!(
            bearing_deg(gp(1.0, 2.0), gp(1.0, 2.0)),
            Err(GeodesyError::IdenticalPoints)
        );
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_0_360(-90.0).unwrap(), 270.0);
        assert_eq!(normalize_0_360(370.0).unwrap(), 10.0);
        assert_eq!(normalize_0_360(0.0).unwrap(), 0.0);
        assert_eq!(normalize_0_360(-1e-300).unwrap(), 0.0);
        assert_eq!(normalize_pm180(270.0).unwrap(), -90.0);
        assert_eq!(normalize_pm180(-181.0).unwrap(), 179.0);
        assert_eq!(normalize_pm180(180.0).unwrap(), 180.0);
        assert_eq!(normalize_pm180(-180.0).unwrap(), 180.0);
        assert!(normalize_0_360(f64::NAN).is_err());
        assert!(normalize_pm180(f64::INFINITY).is_err());
    }

    #[test]
    fn geopoint_validation() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(PlanePoint::new(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn projection_origin() {
        let p = project_conus_albers(gp(23.0, -96.0)).unwrap();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn projection_matches_reference_transformer() {
        // PROJ 9 via pyproj, EPSG:4326 -> EPSG:5070.
        let p = project_conus_albers(gp(35.60, -82.40)).unwrap();
        assert_abs_diff_eq!(p.x, 1_217_258.897_296_842, epsilon = 1e-3);
        assert_abs_diff_eq!(p.y, 1_481_199.915_739_426, epsilon = 1e-3);
        let p = project_conus_albers(gp(35.59, -82.55)).unwrap();
        assert_abs_diff_eq!(p.x, 1_204_081.423_967_059_5, epsilon = 1e-3);
        assert_abs_diff_eq!(p.y, 1_478_180.844_952_806, epsilon = 1e-3);
    }

    #[test]
    fn projection_domain_guard() {
        assert!(matches!(
            project_conus_albers(gp(-10.0, -96.0)),
            Err(GeodesyError::OutOfDomain { .. })
        ));
        assert!(matches!(
            project_conus_albers(gp(40.0, 170.0)),
            Err(GeodesyError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn projection_round_trip_sampled() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5070);
        for _ in 0..1000 {
            let p = gp(rng.gen_range(24.0..50.0), rng.gen_range(-125.0..-66.0));
            let back = unproject_conus_albers(project_conus_albers(p).unwrap()).unwrap();
            assert!((back.lat() - p.lat()).abs() < 1e-9, "{p:?} -> {back:?}");
            assert!((back.lon() - p.lon()).abs() < 1e-9, "{p:?} -> {back:?}");
        }
    }

    #[test]
    fn local_scale_matches_reference() {
        // GRS80 geodesic lengths and EPSG:5070 scale factors at 35.6N from pyproj.
        let origin = project_conus_albers(gp(35.6, -82.5)).unwrap();
        let east = project_conus_albers(gp(35.6, -82.489)).unwrap();
        let north = project_conus_albers(gp(35.609, -82.5)).unwrap();
        let east_ratio = origin.distance(&east) / 996.7848368634146;
        let north_ratio = origin.distance(&north) / 998.5651751849621;
        assert!((east_ratio - 0.9911028082752511).abs() < 1e-6, "{east_ratio}");
        assert!((north_ratio - 1.0089801297781649).abs() < 1e-6, "{north_ratio}");
    }

    proptest! {
        #[test]
        fn reverse_bearing_differs_by_180(
            lat in -60.0f64..60.0, lon in -170.0f64..170.0,
            dlat in -0.006f64..0.006, dlon in -0.006f64..0.006,
        ) {
            prop_assume!(dlat.abs() > 1e-5 || dlon.abs() > 1e-5);
            let a = gp(lat, lon);
            let b = gp(lat + dlat, lon + dlon);
            prop_assume!(haversine_m(a, b) <= 1000.0);
            let ab = bearing_deg(a, b).unwrap().value();
            let ba = bearing_deg(b, a).unwrap().value();
            let diff = normalize_pm180(ba - ab - 180.0).unwrap();
            // Great-circle bearings converge like dlon*sin(lat), so this is
            // within 1e-6 only for the short spans asserted here.
            let convergence = dlon.abs() * (lat + dlat / 2.0).to_radians().sin().abs();
            prop_assert!(diff.abs() <= 1e-6 + convergence * 1.01, "diff {diff}");
        }

        #[test]
        fn normalizers_idempotent_and_agree(a in -1e6f64..1e6) {
            let n360 = normalize_0_360(a).unwrap();
            let n180 = normalize_pm180(a).unwrap();
            prop_assert!((0.0..360.0).contains(&n360));
            prop_assert!(n180 > -180.0 && n180 <= 180.0);
            prop_assert_eq!(normalize_0_360(n360).unwrap(), n360);
            prop_assert_eq!(normalize_pm180(n180).unwrap(), n180);
            prop_assert!(normalize_pm180(n360 - n180).unwrap().abs() < 1e-9);
        }

        #[test]
        fn plane_distance_tracks_haversine(
            lat in 25.0f64..49.0, lon in -124.0f64..-67.0,
            dx in -0.012f64..0.012, dy in -0.012f64..0.012,
        ) {
            let a = gp(lat, lon);
            let b = gp(lat + dy, lon + dx);
            let d_sphere = haversine_m(a, b);
            prop_assume!(d_sphere > 10.0 && d_sphere < 2000.0);
            let d_plane = project_conus_albers(a).unwrap().distance(&project_conus_albers(b).unwrap());
            // Albers scale error reaches about 1.25% at the CONUS edges, plus sphere vs ellipsoid.
            prop_assert!((d_plane - d_sphere).abs() / d_sphere < 0.016, "{d_plane} vs {d_sphere}");
        }
    }
}
