//! Matches a straight GPS run past three parcels and prints the frames the
//! decoder would extract.

use std::collections::BTreeMap;

use streetview_occupancy::geodesy::GeoPoint;
use streetview_occupancy::linkage::{build_frame_manifest, match_track, GpsSample, GpsTrack, ParcelRecord, SpatialIndex, VideoMeta};

fn main() {
    let (lat0, lon0) = (35.6f64, -82.55);
    let dlon = 5.0 / (111_195.0 * lat0.to_radians().cos());
    let dlat = 12.0 / 111_195.0;

    let parcels: Vec<ParcelRecord> = [(1, 10), (2, 20), (3, 31)]
        .iter()
        .map(|&(id, k)| ParcelRecord {
            object_id: id,
            source_key: format!("P{id}"),
            centroid: GeoPoint::new(lat0 + dlat, lon0 + k as f64 * dlon).unwrap(),
            attributes: BTreeMap::new(),
        })
        .collect();
    let track = GpsTrack {
        video_id: "GS010001".into(),
        samples: (0..45)
            .map(|i| GpsSample {
                row_index: i,
                position: GeoPoint::new(lat0, lon0 + i as f64 * dlon).unwrap(),
                speed: None,
                course: None,
            })
            .collect(),
    };

    let index = SpatialIndex::build(&parcels, 25.0).unwrap();
    let out = match_track(&track, &index);
    println!("{} samples, {} raw matches, {} without a parcel", track.samples.len(), out.raw_match_count, out.drops.len());

    let meta = VideoMeta { video_id: "GS010001".into(), fps: 2.0, total_frames: 45, path: None };
    let videos = BTreeMap::from([(meta.video_id.clone(), meta)]);
    let (rows, drops) = build_frame_manifest(&out.matches, &videos).unwrap();
    for (m, r) in out.matches.iter().zip(&rows) {
        println!("parcel {} frame {:>2} at {:.1} m -> {} @ {:.2}s", m.object_id, m.frame_number, m.distance_m, r.output_name, r.timestamp_s);
    }
    assert!(drops.is_empty());
}
