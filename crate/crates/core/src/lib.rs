//! Street-level panorama to parcel occupancy pipeline.

pub mod change;
pub mod decision;
pub mod geodesy;
pub mod linkage;
pub mod pipeline;
pub mod rectify;
pub mod stats;
pub mod synthetic;
pub mod vlm;
