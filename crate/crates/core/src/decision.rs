//! One-stage threshold rule and frame-to-visit label consolidation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vlm::AttributeVector;

pub const DEFAULT_TAU: i32 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("cannot consolidate an empty frame list")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OccupancyLabel {
    Occupied,
    NotOccupied,
    Uncertain,
}

impl OccupancyLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            OccupancyLabel::Occupied => "Occupied",
            OccupancyLabel::NotOccupied => "NotOccupied",
            OccupancyLabel::Uncertain => "Uncertain",
        }
    }

    /// `Occupied` or `NotOccupied`.
    pub fn is_confident(&self) -> bool {
        !matches!(self, OccupancyLabel::Uncertain)
    }

    /// Swaps Occupied and NotOccupied; Uncertain is fixed.
    pub fn flipped(&self) -> Self {
        match self {
            OccupancyLabel::Occupied => OccupancyLabel::NotOccupied,
            OccupancyLabel::NotOccupied => OccupancyLabel::Occupied,
            OccupancyLabel::Uncertain => OccupancyLabel::Uncertain,
        }
    }
}

impl fmt::Display for OccupancyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OccupancyLabel {
    type Err = String;

    /// Accepts the canonical names plus the spaced/underscored spellings used
    /// in annotation sheets ("Not Occupied", "not_occupied", "Unknown").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "occupied" => Ok(OccupancyLabel::Occupied),
            "notoccupied" | "vacant" => Ok(OccupancyLabel::NotOccupied),
            "uncertain" | "unknown" => Ok(OccupancyLabel::Uncertain),
            _ => Err(format!("unknown occupancy label {s:?}")),
        }
    }
}

/// Risk indicator count `r` (0..=8) and vehicle flag `v` (0/1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiskSummary {
    pub r: u8,
    pub v: u8,
}

/// Counts the eight risk indicators; an inaccessible site counts as a risk.
pub fn risk_count(a: &AttributeVector) -> RiskSummary {
    let risks = [
        a.house_destruction,
        a.structural_damage,
        a.exterior_debris,
        a.open_doors_windows,
        !a.site_accessible,
        a.exterior_mud,
        a.emergency_markings,
        a.major_repairs,
    ];
    RiskSummary { r: risks.iter().filter(|&&x| x).count() as u8, v: a.vehicle_presence as u8 }
}

/// NotOccupied iff `r - v >= tau`.
pub fn one_stage_label(a: &AttributeVector, tau: i32) -> OccupancyLabel {
    let RiskSummary { r, v } = risk_count(a);
    if r as i32 - v as i32 >= tau {
        OccupancyLabel::NotOccupied
    } else {
        OccupancyLabel::Occupied
    }
}

/// Result of consolidating a visit's frame labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Consolidated {
    pub label: OccupancyLabel,
    /// An Uncertain frame forced NotOccupied although the confident frames
    /// alone would have voted Occupied.
    pub uncertain_override: bool,
}

/// Majority vote over frame labels. Ties and any Uncertain frame give
/// NotOccupied; all-Uncertain gives Uncertain.
pub fn consolidate_visit(frame_labels: &[OccupancyLabel]) -> Result<OccupancyLabel, DecisionError> {
    consolidate_visit_audited(frame_labels).map(|c| c.label)
}

pub fn consolidate_visit_audited(frame_labels: &[OccupancyLabel]) -> Result<Consolidated, DecisionError> {
    if frame_labels.is_empty() {
        return Err(DecisionError::EmptyInput);
    }
    let count = |l: OccupancyLabel| frame_labels.iter().filter(|&&x| x == l).count();
    let (occ, not_occ, unc) =
        (count(OccupancyLabel::Occupied), count(OccupancyLabel::NotOccupied), count(OccupancyLabel::Uncertain));
    let label = if unc == frame_labels.len() {
        OccupancyLabel::Uncertain
    } else if unc > 0 || occ == not_occ || not_occ > occ {
        OccupancyLabel::NotOccupied
    } else {
        OccupancyLabel::Occupied
    };
    Ok(Consolidated { label, uncertain_override: unc > 0 && occ > not_occ })
}

/// Source of a visit label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    OneStage,
    TwoStage,
    GroundTruth,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::OneStage, Strategy::TwoStage, Strategy::GroundTruth];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::OneStage => "OneStage",
            Strategy::TwoStage => "TwoStage",
            Strategy::GroundTruth => "GroundTruth",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// One consolidated label for a parcel, visit and strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitLabelRecord {
    pub object_id: u32,
    pub visit: String,
    pub strategy: Strategy,
    pub label: OccupancyLabel,
    pub n_frames_used: usize,
    pub excluded: bool,
    /// An Uncertain frame overrode an Occupied majority.
    pub audit: bool,
}

impl VisitLabelRecord {
    /// Consolidates `frames`; an empty list yields an excluded Uncertain record.
    pub fn from_frames(object_id: u32, visit: &str, strategy: Strategy, frames: &[OccupancyLabel]) -> Self {
        let c = consolidate_visit_audited(frames)
            .unwrap_or(Consolidated { label: OccupancyLabel::Uncertain, uncertain_override: false });
        Self {
            object_id,
            visit: visit.to_string(),
            strategy,
            label: c.label,
            n_frames_used: frames.len(),
            excluded: !c.label.is_confident(),
            audit: c.uncertain_override,
        }
    }
}
